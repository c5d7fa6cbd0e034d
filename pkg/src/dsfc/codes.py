"""Prefix-free coding machinery.

Kraft-certified prefix codes, Shannon-Fano-Elias (SFE) construction over
exact rational masses, count-vector (type) enumeration and ranking,
per-type partition codes for blocks under a hard distortion budget,
enumerative coding of quantized letter sequences, and the static tail
coder that the second stage of the two-stage codec runs on.

All codeword arithmetic is exact: interval endpoints are Fractions, widths
and ranks are Python integers, and every comparison against the distortion
budget is a cross-multiplied integer test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ._backend import kernels
from .bitio import BitReader, BitWriter
from .distortion import (
    DistortionSpec,
    RationalDistortionLevel,
    TruncatedDistortion,
)
from .errors import (
    BudgetExceeded,
    ConfigInvalid,
    InvalidOverflowSymbol,
    KraftViolation,
    MalformedStream,
    NotSummable,
    ZeroProbabilitySymbol,
)
from .sources import EnvelopeSpec, GeometricTail, SourcePmf, rationalize_up

# ---------------------------------------------------------------------------
# exact log2 ceilings and SFE codewords


def ceil_log2(m: int) -> int:
    """ceil(log2(m)) for integer m >= 1."""
    if m < 1:
        raise ValueError("m >= 1 required")
    return (m - 1).bit_length()


def _pow2_ge(e: int, a: int, b: int) -> bool:
    """2**e >= a/b for positive integers a, b."""
    if e >= 0:
        return (b << e) >= a
    return b >= (a << (-e))


def ceil_log2_frac(fr: Fraction) -> int:
    """ceil(log2(fr)) for a positive rational, exact."""
    if fr <= 0:
        raise ValueError("positive rational required")
    a, b = fr.numerator, fr.denominator
    e = a.bit_length() - b.bit_length()
    while _pow2_ge(e - 1, a, b):
        e -= 1
    while not _pow2_ge(e, a, b):
        e += 1
    return e


def sfe_codeword(lo: Fraction, width: Fraction) -> Tuple[int, int]:
    """Canonical SFE codeword for the CDF interval [lo, lo + width).

    L = ceil(log2(1/width)) + 1 bits of the interval midpoint; the dyadic
    interval those bits name is contained in [lo, lo + width), which is what
    makes the code prefix-free across disjoint intervals.
    """
    if width <= 0 or lo < 0:
        raise ValueError("degenerate interval")
    L = ceil_log2_frac(1 / width) + 1
    mid = lo + width / 2
    value = (mid.numerator << L) // mid.denominator
    if value >> L:
        raise ValueError("interval extends past 1; masses not normalized")
    return value, L


# ---------------------------------------------------------------------------
# prefix codes


class PrefixCode:
    """A prefix-free code presented behaviorally.

    length_of(sym) -> bits; codeword_of(sym) -> (value, width);
    decode_one(reader) -> sym; kraft_certificate() -> exact Kraft sum for
    finite codes or a certified upper bound for countable ones.
    """

    def __init__(
        self,
        *,
        length_of: Callable[[object], int],
        codeword_of: Callable[[object], Tuple[int, int]],
        decode_one: Callable[[BitReader], object],
        kraft_certificate: Callable[[], Fraction],
        symbols: Optional[Sequence] = None,
    ):
        self.length_of = length_of
        self.codeword_of = codeword_of
        self._decode_one = decode_one
        self._kraft = kraft_certificate
        self.symbols = list(symbols) if symbols is not None else None

    def decode_one(self, reader: BitReader):
        return self._decode_one(reader)

    def kraft_certificate(self) -> Fraction:
        return self._kraft()

    def encode_to(self, writer: BitWriter, symbol) -> int:
        value, width = self.codeword_of(symbol)
        writer.write_uint(value, width)
        return width

    @staticmethod
    def from_codewords(mapping: Dict) -> "PrefixCode":
        """Explicit finite code from symbol -> bitstring; checks the prefix
        property exhaustively."""
        if not mapping:
            raise ValueError("empty code")
        words = sorted(mapping.values())
        for a, b in zip(words, words[1:]):
            if b.startswith(a):
                raise ValueError(f"codeword {a!r} is a prefix of {b!r}")
        table = {s: (int(w, 2) if w else 0, len(w)) for s, w in mapping.items()}
        trie = {w: s for s, w in mapping.items()}

        def decode(reader: BitReader):
            word = ""
            maxlen = max(len(w) for w in mapping.values())
            while len(word) <= maxlen:
                word += "1" if reader.read_bit() else "0"
                if word in trie:
                    return trie[word]
            raise MalformedStream("no codeword matches the stream")

        kraft = sum(Fraction(1, 1 << len(w)) for w in mapping.values())
        return PrefixCode(
            length_of=lambda s: table[s][1],
            codeword_of=lambda s: table[s],
            decode_one=decode,
            kraft_certificate=lambda: kraft,
            symbols=list(mapping),
        )


def kraft_sum(code) -> Fraction:
    """Exact Kraft sum (finite) or certified upper bound (countable).

    Accepts a PrefixCode or a bare iterable of codeword strings. Raises
    KraftViolation when the certified value exceeds 1 -- which for every
    construction in this package means a bug, not an input problem.
    """
    if isinstance(code, PrefixCode):
        total = code.kraft_certificate()
    else:
        words = list(code)
        seen = sorted(words)
        for a, b in zip(seen, seen[1:]):
            if b.startswith(a):
                raise ValueError(f"codeword {a!r} is a prefix of {b!r}")
        total = sum(Fraction(1, 1 << len(w)) for w in words)
    if total > 1:
        raise KraftViolation(f"Kraft sum {total} exceeds 1")
    return total


# ---------------------------------------------------------------------------
# SFE codes over explicit masses and over pmfs


def _sfe_decode_generic(
    reader: BitReader,
    locate: Callable[[Fraction], object],
    interval_of: Callable[[object], Tuple[Fraction, Fraction]],
    length_of: Callable[[object], int],
):
    """Bit-at-a-time SFE decoding: grow a dyadic interval until it nests in
    one symbol's CDF interval, then consume the rest of that codeword."""
    t = 0
    v = 0
    while t < (1 << 20):
        v = (v << 1) | reader.read_bit()
        t += 1
        point = Fraction(v, 1 << t)
        sym = locate(point)
        lo, width = interval_of(sym)
        if lo <= point and Fraction(v + 1, 1 << t) <= lo + width:
            for _ in range(length_of(sym) - t):
                reader.read_bit()
            return sym
    raise MalformedStream("no symbol resolved within the length guard")


def _exact_masses(values: Sequence) -> List[Fraction]:
    out = []
    for v in values:
        fr = Fraction(v)  # floats are taken at their exact binary value
        if fr <= 0:
            raise ZeroProbabilitySymbol(f"mass {v} is not positive")
        out.append(fr)
    return out


def finite_sfe_code(masses: Sequence, symbols: Optional[Sequence] = None) -> PrefixCode:
    """SFE code over an explicit finite mass vector (exact rationals; floats
    are taken at their exact binary value). Masses above total 1 are
    normalized so codewords stay within [0, 1)."""
    q = _exact_masses(masses)
    total = sum(q)
    if total > 1:
        q = [m / total for m in q]
    syms = list(symbols) if symbols is not None else list(range(len(q)))
    index = {s: i for i, s in enumerate(syms)}
    cum = [Fraction(0)]
    for m in q:
        cum.append(cum[-1] + m)
    words = [sfe_codeword(cum[i], q[i]) for i in range(len(q))]

    def locate(point: Fraction):
        lo_i, hi_i = 0, len(q) - 1
        while lo_i < hi_i:
            mid = (lo_i + hi_i + 1) // 2
            if cum[mid] <= point:
                lo_i = mid
            else:
                hi_i = mid - 1
        return syms[lo_i]

    def interval_of(sym):
        i = index[sym]
        return cum[i], q[i]

    def decode(reader: BitReader):
        return _sfe_decode_generic(
            reader, locate, interval_of, lambda s: words[index[s]][1]
        )

    kraft = sum(Fraction(1, 1 << L) for _, L in words)
    return PrefixCode(
        length_of=lambda s: words[index[s]][1],
        codeword_of=lambda s: words[index[s]],
        decode_one=decode,
        kraft_certificate=lambda: kraft,
        symbols=syms,
    )


def sfe_code(q: SourcePmf) -> PrefixCode:
    """SFE code over a pmf in canonical ascending-symbol order.

    Finite-support pmfs and pmfs with a rational-parameter geometric tail are
    coded exactly; the tail CDF is evaluated in closed form so deep symbols
    never require enumeration. Power-law tails have no exact rational CDF and
    are rejected -- the envelope tail coder handles that case with a rational
    surrogate instead.
    """
    if q.tail is not None and not isinstance(q.tail, GeometricTail):
        raise ValueError("only geometric analytic tails are codeable exactly here")
    expl = _exact_masses([p for _, p in q._explicit()])
    floor = q.support_floor
    tail = q.tail
    if tail is not None:
        coeff = Fraction(tail.coeff)
        ratio = Fraction(tail.ratio)
        if not 0 < ratio < 1 or coeff <= 0:
            raise ZeroProbabilitySymbol("degenerate tail")
        tail_start = tail.start
        tail_at = lambda x: coeff * ratio**x
        tail_suffix = lambda x: coeff * ratio**x / (1 - ratio)
    else:
        tail_start = None
        tail_at = tail_suffix = None

    cum = [Fraction(0)]
    for m in expl:
        cum.append(cum[-1] + m)
    total = cum[-1] + (tail_suffix(tail_start) if tail is not None else Fraction(0))
    scale = total if total > 1 else Fraction(1)

    def mass(x: int) -> Fraction:
        i = x - floor
        if 0 <= i < len(expl):
            return expl[i] / scale
        if tail is not None and x >= tail_start:
            return tail_at(x) / scale
        raise ZeroProbabilitySymbol(f"symbol {x} outside the coded support")

    def cdf_before(x: int) -> Fraction:
        i = x - floor
        if i <= 0:
            return Fraction(0)
        if i < len(expl):
            return cum[i] / scale
        if tail is None:
            return cum[-1] / scale
        return (cum[-1] + tail_suffix(tail_start) - tail_suffix(max(x, tail_start))) / scale

    def length_of(x: int) -> int:
        return ceil_log2_frac(1 / mass(x)) + 1

    def codeword_of(x: int) -> Tuple[int, int]:
        return sfe_codeword(cdf_before(x), mass(x))

    top_explicit = floor + len(expl) - 1

    def locate(point: Fraction) -> int:
        if point < cum[-1] / scale:
            lo_i, hi_i = 0, len(expl) - 1
            while lo_i < hi_i:
                mid = (lo_i + hi_i + 1) // 2
                if cum[mid] / scale <= point:
                    lo_i = mid
                else:
                    hi_i = mid - 1
            return floor + lo_i
        if tail is None:
            raise MalformedStream("stream value beyond the coded support")
        x = tail_start
        step = 1
        while cdf_before(x + step) <= point:
            step <<= 1
            if step > 1 << 80:
                raise MalformedStream("stream value too close to 1 to resolve")
        lo_x, hi_x = x + (step >> 1 if step > 1 else 0), x + step - 1
        while lo_x < hi_x:
            mid = (lo_x + hi_x + 1) // 2
            if cdf_before(mid) <= point:
                lo_x = mid
            else:
                hi_x = mid - 1
        return lo_x

    def decode(reader: BitReader) -> int:
        return _sfe_decode_generic(
            reader, locate, lambda s: (cdf_before(s), mass(s)), length_of
        )

    def kraft() -> Fraction:
        acc = sum(Fraction(1, 1 << length_of(floor + i)) for i in range(len(expl)))
        if tail is not None:
            window_end = max(tail_start + 64, floor + len(expl))
            for x in range(tail_start, window_end):
                acc += Fraction(1, 1 << length_of(x))
            acc += tail_suffix(window_end) / scale / 2
        return acc

    syms = list(range(floor, top_explicit + 1)) if tail is None else None
    return PrefixCode(
        length_of=length_of,
        codeword_of=codeword_of,
        decode_one=decode,
        kraft_certificate=kraft,
        symbols=syms,
    )


# ---------------------------------------------------------------------------
# types: enumeration, fixed-width index, enumerative ranking


@dataclass(frozen=True)
class TypeClassIndex:
    """All count vectors of length `alphabet_size` summing to `n`, listed
    with the first coordinate descending, plus per-type class sizes."""

    alphabet_size: int
    n: int
    types: tuple
    sizes: tuple

    def index_of(self, counts: Tuple[int, ...]) -> int:
        return composition_rank(counts)

    def __len__(self) -> int:
        return len(self.types)


def multinomial(n: int, counts: Sequence[int]) -> int:
    out = math.factorial(n)
    for c in counts:
        out //= math.factorial(c)
    return out


_TYPE_BUDGET = 1 << 21


def enumerate_types(k: int, n: int, budget: int = _TYPE_BUDGET) -> TypeClassIndex:
    """Count vectors of length k summing to n (k is the alphabet size)."""
    if k < 1 or n < 1:
        raise ValueError("k >= 1 and n >= 1 required")
    if (n + 1) ** k > budget:
        raise BudgetExceeded(f"(n+1)^k = {(n + 1) ** k} exceeds budget {budget}")
    types: List[Tuple[int, ...]] = []

    def rec(prefix: Tuple[int, ...], rem: int, parts: int) -> None:
        if parts == 1:
            types.append(prefix + (rem,))
            return
        for v in range(rem, -1, -1):
            rec(prefix + (v,), rem - v, parts - 1)

    rec((), n, k)
    sizes = tuple(multinomial(n, t) for t in types)
    return TypeClassIndex(k, n, tuple(types), sizes)


def type_index_code(k: int, n: int, budget: int = _TYPE_BUDGET) -> PrefixCode:
    """Fixed-width injective encoding of count vectors: each of the k counts
    in its own ceil(log2(n+1))-bit field."""
    if k < 1 or n < 1:
        raise ValueError("k >= 1 and n >= 1 required")
    if (n + 1) ** k > budget:
        raise BudgetExceeded(f"(n+1)^k = {(n + 1) ** k} exceeds budget {budget}")
    field_w = ceil_log2(n + 1)
    width = k * field_w
    ntypes = math.comb(n + k - 1, k - 1)

    def codeword_of(counts: Tuple[int, ...]) -> Tuple[int, int]:
        if len(counts) != k or sum(counts) != n or any(c < 0 for c in counts):
            raise ValueError(f"not a valid count vector for (k={k}, n={n}): {counts}")
        value = 0
        for c in counts:
            value = (value << field_w) | c
        return value, width

    def decode(reader: BitReader) -> Tuple[int, ...]:
        counts = tuple(reader.read_uint(field_w) for _ in range(k))
        if sum(counts) != n:
            raise MalformedStream(f"decoded counts {counts} do not sum to {n}")
        return counts

    return PrefixCode(
        length_of=lambda _c: width,
        codeword_of=codeword_of,
        decode_one=decode,
        kraft_certificate=lambda: Fraction(ntypes, 1 << width),
        symbols=None,
    )


def composition_rank(counts: Sequence[int]) -> int:
    """Rank of a count vector in the first-coordinate-descending order used
    by enumerate_types; computed combinatorially, no enumeration."""
    parts = len(counts)
    rem = sum(counts)
    rank = 0
    for i in range(parts - 1):
        tail_parts = parts - i - 1
        for v in range(rem, counts[i], -1):
            rank += math.comb(rem - v + tail_parts - 1, tail_parts - 1)
        rem -= counts[i]
    return rank


def composition_unrank(rank: int, n: int, parts: int) -> Tuple[int, ...]:
    counts: List[int] = []
    rem = n
    for i in range(parts - 1):
        tail_parts = parts - i - 1
        for v in range(rem, -1, -1):
            block = math.comb(rem - v + tail_parts - 1, tail_parts - 1)
            if rank < block:
                counts.append(v)
                rem -= v
                break
            rank -= block
        else:
            raise ValueError("rank out of range")
    counts.append(rem)
    return tuple(counts)


def multiset_rank(seq: Sequence[int], counts: Sequence[int]) -> int:
    """Lexicographic rank of `seq` among arrangements of the multiset given
    by `counts` (symbols are 0-based indices into counts)."""
    remaining = list(counts)
    total = len(seq)
    perms = multinomial(total, remaining)
    rank = 0
    for pos, s in enumerate(seq):
        rem = total - pos
        for t in range(s):
            if remaining[t]:
                rank += perms * remaining[t] // rem
        perms = perms * remaining[s] // rem
        remaining[s] -= 1
    return rank


def multiset_unrank(rank: int, counts: Sequence[int]) -> Tuple[int, ...]:
    remaining = list(counts)
    total = sum(remaining)
    perms = multinomial(total, remaining)
    seq: List[int] = []
    for pos in range(total):
        rem = total - pos
        for s in range(len(remaining)):
            if not remaining[s]:
                continue
            below = perms * remaining[s] // rem
            if rank < below:
                seq.append(s)
                perms = below
                remaining[s] -= 1
                break
            rank -= below
        else:
            raise ValueError("rank out of range")
    return tuple(seq)


# ---------------------------------------------------------------------------
# block partitions


@dataclass(frozen=True)
class BlockPartition:
    """Disjoint cells of symbol blocks with one in-cell prototype each.

    When `space` is declared the cells must cover it exactly. The d-cover
    certificate (every member within budget of its cell's prototype) is an
    exact rational check via verify_cover.
    """

    cells: tuple
    prototypes: tuple
    space: Optional[tuple] = None

    def __post_init__(self) -> None:
        if len(self.cells) != len(self.prototypes):
            raise ValueError("one prototype per cell required")
        seen = set()
        for cell, proto in zip(self.cells, self.prototypes):
            if proto not in cell:
                raise ValueError(f"prototype {proto} not a member of its cell")
            for b in cell:
                if b in seen:
                    raise ValueError(f"block {b} appears in two cells")
                seen.add(b)
        if self.space is not None and seen != set(self.space):
            raise ValueError("cells do not cover the declared block space")

    def verify_cover(self, cost, level: RationalDistortionLevel) -> bool:
        """Exact check: sup over each cell of the block distortion to its
        prototype is within the budget. `cost` is a DistortionSpec or a
        TruncatedDistortion."""
        total = (
            cost.block_total
            if isinstance(cost, TruncatedDistortion)
            else (lambda x, y: _plain_block_total(cost, x, y))
        )
        for cell, proto in zip(self.cells, self.prototypes):
            n = len(proto)
            for member in cell:
                if Fraction(total(member, proto)) * level.den > level.num * n:
                    return False
        return True

    def cell_of(self, block: Tuple[int, ...]) -> int:
        for i, cell in enumerate(self.cells):
            if block in cell:
                return i
        raise KeyError(f"block {block} not in any cell")


def _plain_block_total(spec: DistortionSpec, x, y):
    from .distortion import block_distortion_total

    return block_distortion_total(spec, x, y)


# ---------------------------------------------------------------------------
# per-type partition codes


_CLASS_BUDGET = 10
_PROTO_BUDGET = 8192
_SCAN_BUDGET = 1 << 26  # element operations in the vectorized coverage scan


def _multiset_permutations(counts: Sequence[int]) -> List[Tuple[int, ...]]:
    """All blocks of the given type over letters 1..len(counts), lex order."""
    out: List[Tuple[int, ...]] = []
    remaining = list(counts)
    n = sum(remaining)

    def rec(prefix: Tuple[int, ...]) -> None:
        if len(prefix) == n:
            out.append(prefix)
            return
        for s in range(len(remaining)):
            if remaining[s]:
                remaining[s] -= 1
                rec(prefix + (s + 1,))
                remaining[s] += 1

    rec(())
    return out


def _letter_cost_table(td: TruncatedDistortion, alphabet: int):
    return [
        [Fraction(td.letter(i, j)) for j in range(1, alphabet + 1)]
        for i in range(1, alphabet + 1)
    ]


def _block_cost(table, x: Tuple[int, ...], y: Tuple[int, ...]) -> Fraction:
    acc = Fraction(0)
    for a, b in zip(x, y):
        acc += table[a - 1][b - 1]
    return acc


def _entropy_of_sizes(sizes: Sequence[int], m: int) -> float:
    acc = 0.0
    for c in sizes:
        acc += (c / m) * math.log2(m / c)
    return acc


def per_type_code(
    counts: Sequence[int],
    level: RationalDistortionLevel,
    spec: DistortionSpec,
    mode: str = "oracle",
    *,
    class_budget: int = _CLASS_BUDGET,
    proto_budget: int = _PROTO_BUDGET,
) -> Tuple[BlockPartition, PrefixCode]:
    """A distortion-respecting sub-code for all blocks of one type.

    The working alphabet is 1..len(counts) with the top letter standing for
    every symbol above the threshold, so costs are the truncated ones. In
    oracle mode the returned partition minimizes the induced entropy under
    the uniform-on-type distribution exactly (partition enumeration with a
    coverability fast path); grid mode quantizes letters into fixed
    intervals and is always within budget. Cells are coded by an SFE code
    over their uniform-on-type masses.

    Prototypes may be blocks outside the type (they join their cell, with
    zero mass). A constant prototype is preferred whenever one covers the
    whole class (its cost is type-invariant, so the check is a single sum);
    past that, ties break to the lexicographically smallest cell list and
    then the lexicographically smallest prototype assignment.
    """
    counts = tuple(int(c) for c in counts)
    n = sum(counts)
    alphabet = len(counts)
    if n < 1 or alphabet < 1 or any(c < 0 for c in counts):
        raise ValueError(f"bad count vector {counts}")
    blocks = _multiset_permutations(counts)
    m = len(blocks)
    if alphabet == 1:
        only = blocks[0]
        part = BlockPartition(cells=((only,),), prototypes=(only,), space=(only,))
        return part, finite_sfe_code([Fraction(1)], symbols=[0])

    td = TruncatedDistortion(spec, alphabet - 1)
    table = _letter_cost_table(td, alphabet)
    budget_num = level.num * n
    budget_den = level.den

    if mode == "grid":
        return _grid_per_type(blocks, level, spec, alphabet)
    if mode != "oracle":
        raise ValueError(f"unknown per-type mode {mode!r}")

    # constant-prototype fast path: for a constant block the cost is the same
    # for every member of the type, so feasibility is an O(alphabet) sum
    for c in range(1, alphabet + 1):
        cost = sum(counts[s] * table[s][c - 1] for s in range(alphabet))
        if cost * budget_den <= budget_num:
            const_proto = (c,) * n
            cell = tuple(sorted(set(blocks) | {const_proto}))
            part = BlockPartition(
                cells=(cell,), prototypes=(const_proto,), space=cell
            )
            return part, finite_sfe_code([Fraction(1)], symbols=[0])

    space_size = alphabet**n
    if space_size > proto_budget:
        raise BudgetExceeded(
            f"prototype space {alphabet}^{n} exceeds budget {proto_budget} "
            "and no constant prototype covers the type"
        )
    if m > class_budget and space_size * m * n > _SCAN_BUDGET:
        raise BudgetExceeded(
            f"scanning {space_size} prototypes against {m} class members "
            "is over budget and no constant prototype covers the type"
        )

    # cleared denominators: the scan and the masks are integer comparisons
    common_den = 1
    for row in table:
        for v in row:
            common_den = common_den * v.denominator // math.gcd(
                common_den, v.denominator
            )
    t_int = np.array(
        [[int(v * common_den) for v in row] for row in table], dtype=np.int64
    )
    b_num = budget_num * common_den
    space = _lex_blocks(alphabet, n)
    blocks_arr = np.array(blocks, dtype=np.int64) - 1
    space_arr = np.array(space, dtype=np.int64) - 1
    cost_int = np.zeros((m, space_size), dtype=np.int64)
    for pos in range(n):
        cost_int += t_int[blocks_arr[:, pos][:, None], space_arr[:, pos][None, :]]
    feasible = cost_int * budget_den <= b_num

    covers_all = feasible.all(axis=0)
    if covers_all.any():
        proto = space[int(np.argmax(covers_all))]  # space is lex ordered
        cell = tuple(sorted(set(blocks) | {proto}))
        part = BlockPartition(cells=(cell,), prototypes=(proto,), space=cell)
        return part, finite_sfe_code([Fraction(1)], symbols=[0])
    if m > class_budget:
        raise BudgetExceeded(
            f"type class of size {m} exceeds the enumeration budget {class_budget}"
        )
    block_index = {b: i for i, b in enumerate(blocks)}
    cover_masks = {}
    for j, y in enumerate(space):
        col = feasible[:, j]
        if col.any():
            mask = 0
            for i in np.nonzero(col)[0]:
                mask |= 1 << int(i)
            cover_masks[y] = mask
    return _enumerated_per_type(blocks, block_index, cover_masks, m)


def _lex_blocks(alphabet: int, n: int) -> List[Tuple[int, ...]]:
    out: List[Tuple[int, ...]] = [()]
    for _ in range(n):
        out = [b + (s,) for b in out for s in range(1, alphabet + 1)]
    return out


def _enumerated_per_type(blocks, block_index, cover_masks, m):
    """Exact entropy-minimizing partition of a type class by restricted-growth
    enumeration, with coverability pruning and distinct out-of-type
    prototype assignment."""
    mask_list = list(cover_masks.values())

    def coverable(cell_mask: int) -> bool:
        return any(cell_mask & ~mk == 0 for mk in mask_list)

    best: Optional[Tuple[float, tuple, tuple]] = None  # (H, cells_idx, protos)

    assign: List[int] = [0] * m
    cell_masks: List[int] = []

    def try_partition() -> None:
        nonlocal best
        ncells = max(assign) + 1
        cells_idx = tuple(
            tuple(i for i in range(m) if assign[i] == c) for c in range(ncells)
        )
        sizes = [len(c) for c in cells_idx]
        H = _entropy_of_sizes(sizes, m)
        if best is not None:
            bH = best[0]
            if H > bH + 1e-12 or (abs(H - bH) <= 1e-12 and cells_idx >= best[1]):
                return
        protos = _assign_prototypes(cells_idx, blocks, block_index, cover_masks)
        if protos is None:
            return
        best = (H, cells_idx, protos)

    def rec(i: int) -> None:
        if i == m:
            try_partition()
            return
        bit = 1 << i
        for c in range(len(cell_masks)):
            merged = cell_masks[c] | bit
            if coverable(merged):
                cell_masks[c] = merged
                old = assign[i]
                assign[i] = c
                rec(i + 1)
                assign[i] = old
                cell_masks[c] = merged & ~bit
        cell_masks.append(bit)
        assign[i] = len(cell_masks) - 1
        rec(i + 1)
        cell_masks.pop()

    rec(0)
    assert best is not None  # singletons always assignable (self-prototypes)
    _H, cells_idx, protos = best
    out_cells = []
    for ci, proto in zip(cells_idx, protos):
        members = set(blocks[i] for i in ci)
        members.add(proto)
        out_cells.append(tuple(sorted(members)))
    masses = [Fraction(len(ci), m) for ci in cells_idx]
    space = tuple(sorted(set().union(*[set(c) for c in out_cells])))
    part = BlockPartition(cells=tuple(out_cells), prototypes=tuple(protos), space=space)
    return part, finite_sfe_code(masses, symbols=list(range(len(out_cells))))


def _assign_prototypes(cells_idx, blocks, block_index, cover_masks):
    """Distinct prototypes, lexicographically smallest assignment vector.

    Candidates for a cell: blocks that cover it and are either members of the
    cell or outside the type class entirely (a member of another cell cannot
    be moved). Returns None when no distinct assignment exists."""
    candidates: List[List[tuple]] = []
    for ci in cells_idx:
        cell_mask = 0
        for i in ci:
            cell_mask |= 1 << i
        cell_set = {blocks[i] for i in ci}
        cands = []
        for y, mk in cover_masks.items():
            if cell_mask & ~mk:
                continue
            if y in block_index and y not in cell_set:
                continue
            cands.append(y)
        if not cands:
            return None
        cands.sort()
        candidates.append(cands)

    chosen: List[tuple] = []
    used: set = set()

    def backtrack(i: int) -> bool:
        if i == len(candidates):
            return True
        for y in candidates[i]:
            out_of_type = y not in block_index
            if out_of_type and y in used:
                continue
            chosen.append(y)
            if out_of_type:
                used.add(y)
            if backtrack(i + 1):
                return True
            chosen.pop()
            if out_of_type:
                used.discard(y)
        return False

    return tuple(chosen) if backtrack(0) else None


def _grid_per_type(blocks, level, spec, alphabet):
    """Heuristic valid partition: group type members by their per-letter
    grid quantization; certificate holds by construction (cell radius <= d)."""
    k = alphabet - 1
    r = grid_radius(spec, level)
    groups: Dict[tuple, List[tuple]] = {}
    for b in blocks:
        arr = np.asarray(b, dtype=np.int64)
        _cells, protos = kernels.grid_quantize(arr, r, k)
        groups.setdefault(tuple(int(p) for p in protos), []).append(b)
    cell_list = []
    proto_list = []
    masses = []
    m = len(blocks)
    for proto in sorted(groups):
        members = set(groups[proto])
        masses.append(Fraction(len(members), m))
        members.add(proto)
        cell_list.append(tuple(sorted(members)))
        proto_list.append(proto)
    space = tuple(sorted(set().union(*[set(c) for c in cell_list])))
    part = BlockPartition(
        cells=tuple(cell_list), prototypes=tuple(proto_list), space=space
    )
    return part, finite_sfe_code(masses, symbols=list(range(len(cell_list))))


# ---------------------------------------------------------------------------
# grid quantizer arithmetic (shared with the codec)


def grid_radius(spec: DistortionSpec, level: RationalDistortionLevel) -> int:
    """Largest per-letter deviation the budget allows: floor(d) for absolute
    cost, floor(d / scale) for the scaled clipped cost (whose budgets are
    kept below the ceiling, so the clip never binds here)."""
    d = level.as_fraction()
    if spec.kind == "bounded":
        return int(d / Fraction(spec.scale))
    return int(d)


def grid_cell_count(k: int, r: int) -> int:
    width = 2 * r + 1
    return -((k + 1) // -width)  # ceil((k+1)/width)


def grid_prototype_of_cell(cell: int, r: int, k: int) -> int:
    return min(1 + cell * (2 * r + 1) + r, k + 1)


# ---------------------------------------------------------------------------
# assembled first stage, oracle-backed (type index + per-type codeword)


class OracleFirstStage:
    """Type-indexed first stage over the working alphabet 1..k+1: a fixed
    width enumerative type rank, then the cell codeword of the block's
    per-type partition code. Exact, budget-limited; per-type codes are
    built once and cached."""

    def __init__(
        self,
        k: int,
        n: int,
        level: RationalDistortionLevel,
        spec: DistortionSpec,
        *,
        mode: str = "oracle",
        class_budget: int = _CLASS_BUDGET,
        proto_budget: int = _PROTO_BUDGET,
    ):
        if k < 1 or n < 1:
            raise ValueError("k >= 1 and n >= 1 required")
        self.k = k
        self.n = n
        self.level = level
        self.spec = spec
        self.mode = mode
        self.class_budget = class_budget
        self.proto_budget = proto_budget
        self.ntypes = math.comb(n + k, k)
        self.width = ceil_log2(self.ntypes)
        self._cache: Dict[tuple, Tuple[BlockPartition, PrefixCode, dict]] = {}

    def _per_type(self, counts: tuple):
        hit = self._cache.get(counts)
        if hit is None:
            part, code = per_type_code(
                counts,
                self.level,
                self.spec,
                self.mode,
                class_budget=self.class_budget,
                proto_budget=self.proto_budget,
            )
            members = {}
            for ci, cell in enumerate(part.cells):
                for b in cell:
                    members[b] = ci
            hit = (part, code, members)
            self._cache[counts] = hit
        return hit

    def type_of(self, block: Sequence[int]) -> tuple:
        counts = [0] * (self.k + 1)
        for s in block:
            counts[int(s) - 1] += 1
        return tuple(counts)

    def encode(self, writer: BitWriter, block: Sequence[int]) -> Tuple[int, tuple]:
        counts = self.type_of(block)
        writer.write_uint(composition_rank(counts), self.width)
        part, code, members = self._per_type(counts)
        ci = members[tuple(int(s) for s in block)]
        bits = self.width + code.encode_to(writer, ci)
        return bits, part.prototypes[ci]

    def decode(self, reader: BitReader) -> tuple:
        rank = reader.read_uint(self.width)
        if rank >= self.ntypes:
            raise MalformedStream(f"type rank {rank} out of range")
        counts = composition_unrank(rank, self.n, self.k + 1)
        part, code, _members = self._per_type(counts)
        ci = code.decode_one(reader)
        return part.prototypes[ci]


def first_stage_encode(
    k: int,
    n: int,
    level: RationalDistortionLevel,
    spec: DistortionSpec,
    block: Sequence[int],
) -> Tuple[str, tuple]:
    """One-shot assembled first stage; returns (bits, reconstruction)."""
    fs = _first_stage(k, n, level, spec)
    w = BitWriter()
    _bits, proto = fs.encode(w, block)
    return w.bit_string(), proto


def first_stage_decode(
    k: int, n: int, level: RationalDistortionLevel, spec: DistortionSpec, bits: str
) -> tuple:
    fs = _first_stage(k, n, level, spec)
    data = BitWriter()
    data.write_bits(bits)
    reader = BitReader(data.to_bytes(), len(bits))
    return fs.decode(reader)


@lru_cache(maxsize=64)
def _first_stage(k, n, level, spec) -> OracleFirstStage:
    return OracleFirstStage(k, n, level, spec)


# ---------------------------------------------------------------------------
# the static tail coder (second stage)


class CodingDistribution:
    """Exact rational coding pmf on the overflow alphabet {1, k+1, k+2, ...}.

    Symbol 1 stands for "the letter fit below the threshold"; tail symbols
    keep their identity. Tail masses dominate the envelope pointwise above
    the threshold, which caps the extra bits any dominated source pays over
    its own overflow entropy at log2(1/head) per overflow symbol coded.
    """

    def __init__(
        self,
        k: int,
        tail_mass: Callable[[int], Fraction],
        tail_suffix: Callable[[int], Fraction],
        support_end: Optional[int] = None,
    ):
        self.k = k
        self._tail_mass = tail_mass
        self._tail_suffix = tail_suffix
        self.support_end = support_end
        tail_total = tail_suffix(k + 1)
        if tail_total >= 1:
            raise ConfigInvalid(
                f"threshold k={k} leaves tail mass {float(tail_total):.6g} >= 1; "
                "raise the threshold"
            )
        self.head = 1 - tail_total

    def mass(self, z: int) -> Fraction:
        if z == 1:
            return self.head
        if z <= self.k:
            raise InvalidOverflowSymbol(f"symbol {z} is neither 1 nor above {self.k}")
        if self.support_end is not None and z > self.support_end:
            return Fraction(0)
        return self._tail_mass(z)

    def cdf_before(self, z: int) -> Fraction:
        if z == 1:
            return Fraction(0)
        if z <= self.k:
            raise InvalidOverflowSymbol(f"symbol {z} is neither 1 nor above {self.k}")
        if self.support_end is not None and z > self.support_end:
            return Fraction(1)
        return 1 - self._tail_suffix(z)

    def length_of(self, z: int) -> int:
        q = self.mass(z)
        if q <= 0:
            raise ZeroProbabilitySymbol(f"symbol {z} has zero coding mass")
        return ceil_log2_frac(1 / q) + 1

    def locate(self, point: Fraction) -> int:
        if point < 0 or point >= 1:
            raise MalformedStream("stream value outside [0, 1)")
        if point < self.head:
            return 1
        step = 1
        while self.cdf_before(self.k + 1 + step) <= point:
            step <<= 1
            if step > 1 << 90:
                raise MalformedStream("stream value unresolvable in the tail")
        lo = self.k + 1 + (step >> 1 if step > 1 else 0)
        hi = self.k + step
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.cdf_before(mid) <= point:
                lo = mid
            else:
                hi = mid - 1
        if self.support_end is not None and lo > self.support_end:
            raise MalformedStream("stream value beyond the coded support")
        return lo

    def kraft_certificate(self, window: int = 64) -> Fraction:
        acc = Fraction(1, 1 << self.length_of(1))
        end = self.k + window
        if self.support_end is not None:
            end = min(end, self.support_end)
        for z in range(self.k + 1, end + 1):
            acc += Fraction(1, 1 << self.length_of(z))
        if self.support_end is None or end < self.support_end:
            acc += self._tail_suffix(end + 1) / 2
        return acc


def coding_distribution(env: EnvelopeSpec, k: int) -> CodingDistribution:
    """The rational tail surrogate the second stage codes against.

    Exact-parameter envelopes (rational-ratio exponentials, tabulated) are
    used as-is; transcendental parameters are rounded up on a 1e-18 grid so
    domination above the threshold is preserved; polynomial envelopes with
    p >= 2 use the telescoping surrogate C/(z(z+1)) with C = (k+2)/(k+1),
    which dominates z^-p from z = k+1 on and sums in closed form.
    """
    if not env.summable:
        raise NotSummable(f"envelope {env.name or env.kind} has no finite tail mass")
    if k < 1:
        raise ValueError("k >= 1 required")
    if env.kind == "exponential":
        if env.ratio is not None:
            scale = Fraction(env.scale)
            ratio = Fraction(env.ratio)
            return CodingDistribution(
                k,
                tail_mass=lambda z: scale * ratio**z,
                tail_suffix=lambda z: scale * ratio**z / (1 - ratio),
            )
        import mpmath

        with mpmath.workdps(40):
            scale_fr = Fraction(env.scale)
            exact_scale = mpmath.mpf(scale_fr.numerator) / scale_fr.denominator
            ratio = rationalize_up(mpmath.e ** (-mpmath.mpf(env.alpha)))
            base = rationalize_up(
                exact_scale * mpmath.e ** (-mpmath.mpf(env.alpha) * (k + 1))
            )
        if ratio >= 1:
            raise ConfigInvalid("decay rate too small to rationalize")
        return CodingDistribution(
            k,
            tail_mass=lambda z: base * ratio ** (z - k - 1),
            tail_suffix=lambda z: base * ratio ** (z - k - 1) / (1 - ratio),
        )
    if env.kind == "polynomial":
        if env.p < 2:
            raise ConfigInvalid(
                "the telescoping tail surrogate needs p >= 2; "
                f"envelope has p={env.p}"
            )
        C = Fraction(k + 2, k + 1)
        return CodingDistribution(
            k,
            tail_mass=lambda z: C / (z * (z + 1)),
            tail_suffix=lambda z: C / z,
        )
    # tabulated: exact envelope values on the finite remainder of the table
    end = env.support_end() or 0
    values = {z: Fraction(env.value_at(z)) for z in range(k + 1, end + 1)}
    suffix_cache: Dict[int, Fraction] = {end + 1: Fraction(0)}
    for z in range(end, k, -1):
        suffix_cache[z] = suffix_cache[z + 1] + values[z]

    def tail_suffix(z: int) -> Fraction:
        if z > end:
            return Fraction(0)
        return suffix_cache[max(z, k + 1)]

    return CodingDistribution(
        k,
        tail_mass=lambda z: values.get(z, Fraction(0)),
        tail_suffix=tail_suffix,
        support_end=end if end > k else k,
    )


def second_stage_code(env: EnvelopeSpec, k: int) -> PrefixCode:
    """Per-symbol SFE code over the overflow alphabet under the envelope's
    rational tail surrogate. The codec concatenates a per-block variant of
    this construction (tail_block_encode) for tighter per-block overhead;
    this per-symbol object is the reference the redundancy accounting and
    the Kraft tests are written against."""
    dist = coding_distribution(env, k)

    def codeword_of(z: int) -> Tuple[int, int]:
        return sfe_codeword(dist.cdf_before(z), dist.mass(z))

    def decode(reader: BitReader) -> int:
        return _sfe_decode_generic(
            reader,
            dist.locate,
            lambda z: (dist.cdf_before(z), dist.mass(z)),
            dist.length_of,
        )

    return PrefixCode(
        length_of=dist.length_of,
        codeword_of=codeword_of,
        decode_one=decode,
        kraft_certificate=dist.kraft_certificate,
        symbols=None,
    )


def tail_block_encode(dist: CodingDistribution, z_seq: Sequence[int]) -> Tuple[int, int]:
    """One SFE codeword for a whole overflow block: interval product over
    symbols, runs of the head symbol batched through exact powers. Returns
    (value, nbits)."""
    lo = Fraction(0)
    w = Fraction(1)
    i = 0
    n = len(z_seq)
    while i < n:
        z = int(z_seq[i])
        if z == 1:
            j = i
            while j < n and int(z_seq[j]) == 1:
                j += 1
            w *= dist.head ** (j - i)
            i = j
        else:
            lo += w * dist.cdf_before(z)
            w *= dist.mass(z)
            i += 1
    return sfe_codeword(lo, w)


def tail_block_decode(
    dist: CodingDistribution, value: int, nbits: int, n: int
) -> List[int]:
    """Invert tail_block_encode: walk the nested CDF intervals containing
    the stream value; head-symbol runs are recovered by galloping search so
    long quiet stretches cost log-many exact comparisons, not linear."""
    if value >> nbits:
        raise MalformedStream("tail stage value wider than its declared bit count")
    v = Fraction(value, 1 << nbits) if nbits else Fraction(0)
    lo = Fraction(0)
    w = Fraction(1)
    out: List[int] = []
    while len(out) < n:
        rel = (v - lo) / w
        if rel < 0 or rel >= 1:
            raise MalformedStream("tail stage bits inconsistent with the pmf")
        if rel < dist.head:
            remaining = n - len(out)
            run = 1
            while run < remaining and rel < dist.head ** (2 * run):
                run *= 2
            lo_m, hi_m = min(run, remaining), min(2 * run, remaining)
            while lo_m < hi_m:
                mid = (lo_m + hi_m + 1) // 2
                if rel < dist.head**mid:
                    lo_m = mid
                else:
                    hi_m = mid - 1
            out.extend([1] * lo_m)
            w *= dist.head**lo_m
        else:
            z = dist.locate(rel)
            if z == 1:
                raise MalformedStream("tail stage interval search failed")
            out.append(z)
            lo += w * dist.cdf_before(z)
            w *= dist.mass(z)
    if not (lo <= v < lo + w):
        raise MalformedStream("tail stage bits inconsistent at block end")
    return out
