"""Independent reference computations the coding modules are tested against.

Nothing here shares code with the codec's hot path: the operational rate is
minimized by explicit partition search, the rate-distortion value by a
slope-parametrized alternating-minimization solver, and the information
radius by the capacity iteration. These are desk-scale oracles with hard
budgets, not production coders.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .codes import BlockPartition
from .distortion import (
    DistortionSpec,
    RationalDistortionLevel,
    letter_distortion,
    truncated_letter_distortion,
)
from .errors import (
    BudgetExceeded,
    NonConvergence,
    WindowTooSmall,
)
from .sources import (
    EnvelopeSpec,
    SourcePmf,
    TailPartitionIndex,
    envelope_distribution,
    head_mass,
    sample_envelope_member,
)

_LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# finite instances


@dataclass(frozen=True)
class FiniteInstance:
    """A memoryless source restricted to a finite symbol window, with block
    length, distortion kind, and budget; the exact playground the brute
    force oracle works on.

    ``truncation_level`` switches every cost to the truncated letter cost at
    that threshold (the codec's stage-one geometry) while the symbols keep
    their identities.
    """

    window: tuple
    masses: tuple  # Fractions, same length as window, sum 1
    n: int
    spec: DistortionSpec
    level: RationalDistortionLevel
    truncation_level: Optional[int] = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n >= 1 required")
        if len(self.window) != len(self.masses) or not self.window:
            raise ValueError("window and masses must align and be nonempty")
        if list(self.window) != sorted(set(self.window)) or self.window[0] < 1:
            raise ValueError("window must be strictly increasing positive integers")
        if any(m < 0 for m in self.masses) or sum(self.masses) != 1:
            raise ValueError("masses must be nonnegative exact rationals summing to 1")
        if self.truncation_level is not None and self.truncation_level < 1:
            raise ValueError("truncation level must be >= 1 when given")

    @staticmethod
    def from_pmf(
        pmf: SourcePmf,
        window: Sequence[int],
        n: int,
        spec: DistortionSpec,
        level: RationalDistortionLevel,
        truncation_level: Optional[int] = None,
    ) -> "FiniteInstance":
        """Restrict and renormalize a pmf to the window, exactly."""
        window = tuple(sorted(set(int(w) for w in window)))
        masses = [Fraction(pmf.mass_at(x)) for x in window]
        total = sum(masses)
        if total <= 0:
            raise ValueError("the pmf puts no mass on the window")
        masses = [m / total for m in masses]
        return FiniteInstance(window, tuple(masses), n, spec, level, truncation_level)

    def letter_cost(self, x: int, y: int) -> Fraction:
        if self.truncation_level is not None:
            return Fraction(
                truncated_letter_distortion(self.spec, self.truncation_level, x, y)
            )
        return Fraction(letter_distortion(self.spec, x, y))


def truncated_image_instance(inst: FiniteInstance) -> FiniteInstance:
    """Push the window through min(x, k+1), adding masses on collisions.

    The truncated cost equals the plain cost of clamped letters, so the
    image instance (still carrying the truncation level) has the same
    operational rate as the source instance; the identity tests compare the
    two brute-force results exactly.
    """
    k = inst.truncation_level
    if k is None:
        raise ValueError("instance has no truncation level")
    collapsed: Dict[int, Fraction] = {}
    for x, m in zip(inst.window, inst.masses):
        key = min(x, k + 1)
        collapsed[key] = collapsed.get(key, Fraction(0)) + m
    window = tuple(sorted(collapsed))
    masses = tuple(collapsed[w] for w in window)
    return FiniteInstance(window, masses, inst.n, inst.spec, inst.level, k)


# ---------------------------------------------------------------------------
# brute-force operational rate


@dataclass(frozen=True)
class BruteForceResult:
    """Exact minimum description rate over all distortion-respecting
    partitions of the windowed block space, with the witness partition."""

    rate: float  # bits per sample
    partition: Optional[BlockPartition]
    cell_masses: tuple  # Fractions of the witness cells
    fast_path: bool = False

    @property
    def mass_multiset(self) -> tuple:
        return tuple(sorted(self.cell_masses))


_BRUTE_BUDGET = 12


def brute_force_operational_rate(
    inst: FiniteInstance, *, budget: int = _BRUTE_BUDGET
) -> BruteForceResult:
    """Minimum cell-index entropy over partitions of the block space whose
    every cell holds one of its own members within the budget of all others.

    A per-letter cover certificate short-circuits the search at any block
    length: when some single letter is within the budget of every window
    letter, the whole space is one cell and the rate is exactly zero. Past
    that, the space must fit the enumeration budget; partitions are walked
    in restricted-growth order with coverability pruning, ties broken to
    the lexicographically smallest cell list.
    """
    w = len(inst.window)
    d = inst.level.as_fraction()

    best_letter = None
    for y0 in inst.window:
        worst = max(inst.letter_cost(x, y0) for x in inst.window)
        if best_letter is None or worst < best_letter[0]:
            best_letter = (worst, y0)
    if best_letter is not None and best_letter[0] <= d:
        y0 = best_letter[1]
        size = w**inst.n
        witness = None
        masses: tuple = (Fraction(1),)
        if size <= budget:
            space = tuple(itertools.product(inst.window, repeat=inst.n))
            proto = (y0,) * inst.n
            witness = BlockPartition(cells=(space,), prototypes=(proto,), space=space)
        return BruteForceResult(0.0, witness, masses, fast_path=True)

    size = w**inst.n
    if size > budget:
        raise BudgetExceeded(
            f"block space of size {size} exceeds the enumeration budget {budget}"
        )
    space = list(itertools.product(inst.window, repeat=inst.n))
    mass_of = {x: m for x, m in zip(inst.window, inst.masses)}
    block_mass = [math.prod((mass_of[s] for s in b), start=Fraction(1)) for b in space]

    letter_cost = {
        (x, y): inst.letter_cost(x, y) for x in inst.window for y in inst.window
    }
    budget_total = d * inst.n
    masks = []
    for y in space:
        mask = 0
        for i, x in enumerate(space):
            total = sum((letter_cost[(a, b)] for a, b in zip(x, y)), Fraction(0))
            if total <= budget_total:
                mask |= 1 << i
        masks.append(mask)

    m = len(space)
    best: Optional[Tuple[float, tuple]] = None
    assign = [0] * m
    cell_masks: List[int] = []

    def coverable(cell_mask: int) -> bool:
        return any(cell_mask & ~mk == 0 for mk in masks)

    def leaf() -> None:
        nonlocal best
        ncells = max(assign) + 1
        cells_idx = tuple(
            tuple(i for i in range(m) if assign[i] == c) for c in range(ncells)
        )
        # in-cell prototype requirement, exact
        for ci in cells_idx:
            cmask = 0
            for i in ci:
                cmask |= 1 << i
            if not any(cmask & ~masks[i] == 0 for i in ci):
                return
        H = 0.0
        for ci in cells_idx:
            cm = float(sum((block_mass[i] for i in ci), Fraction(0)))
            if cm > 0:
                H -= cm * math.log2(cm)
        if best is None or H < best[0] - 1e-12 or (
            abs(H - best[0]) <= 1e-12 and cells_idx < best[1]
        ):
            best = (H, cells_idx)

    def rec(i: int) -> None:
        if i == m:
            leaf()
            return
        bit = 1 << i
        for c in range(len(cell_masks)):
            merged = cell_masks[c] | bit
            if coverable(merged):
                cell_masks[c] = merged
                assign[i] = c
                rec(i + 1)
                cell_masks[c] = merged & ~bit
        cell_masks.append(bit)
        assign[i] = len(cell_masks) - 1
        rec(i + 1)
        cell_masks.pop()

    rec(0)
    assert best is not None  # all-singletons is always feasible
    H, cells_idx = best
    cells = []
    protos = []
    cell_masses = []
    for ci in cells_idx:
        cmask = 0
        for i in ci:
            cmask |= 1 << i
        members = tuple(space[i] for i in ci)
        proto = min(space[i] for i in ci if cmask & ~masks[i] == 0)
        cells.append(members)
        protos.append(proto)
        cell_masses.append(sum((block_mass[i] for i in ci), Fraction(0)))
    part = BlockPartition(
        cells=tuple(cells), prototypes=tuple(protos), space=tuple(space)
    )
    return BruteForceResult(H / inst.n, part, tuple(cell_masses))


def truncation_identity_gap(inst: FiniteInstance, *, budget: int = _BRUTE_BUDGET):
    """Brute-force rates of a truncated instance and of its clamped image.

    Returns (source_result, image_result, exact_equal): exact_equal is True
    when the witness cell-mass multisets agree as exact rationals (equal
    multisets force equal entropies), else falls back to a 1e-12 comparison
    of the float rates.
    """
    if inst.truncation_level is None:
        raise ValueError("instance has no truncation level")
    a = brute_force_operational_rate(inst, budget=budget)
    b = brute_force_operational_rate(truncated_image_instance(inst), budget=budget)
    equal = a.mass_multiset == b.mass_multiset or abs(a.rate - b.rate) <= 1e-12
    return a, b, equal


# ---------------------------------------------------------------------------
# rate-distortion relaxation (expected distortion, single letter)


def blahut_arimoto_rate_distortion(
    inst: FiniteInstance,
    *,
    tol: float = 1e-9,
    max_iter: int = 100_000,
) -> float:
    """The expected-distortion rate-distortion value of the instance's
    single-letter marginal, in bits; a lower reference for the operational
    (hard-budget) rate.

    Slope-parametrized alternating minimization with bisection on the slope;
    the inner objective is checked to be monotone every step and the
    returned value is the tangent-line evaluation at the target distortion,
    which stays a valid lower bound whatever side the bisection stopped on.
    """
    keep = [i for i, m in enumerate(inst.masses) if m > 0]
    xs = [inst.window[i] for i in keep]
    mu = np.array([float(inst.masses[i]) for i in keep])
    ys = list(range(min(inst.window), max(inst.window) + 1))
    C = np.array([[float(inst.letter_cost(x, y)) for y in ys] for x in xs])
    d = float(inst.level.as_fraction())

    entropy = float(-(mu * np.log2(mu)).sum())
    d_max = float((mu @ C).min())
    if d >= d_max - 1e-15:
        return 0.0
    if d <= 0:
        return entropy

    iters = 0

    def solve_slope(s: float, q0: np.ndarray) -> Tuple[float, float, np.ndarray]:
        """(R_nats, D, q) at slope s <= 0."""
        nonlocal iters
        A = np.exp(s * C)
        q = q0.copy()
        prev_obj = math.inf
        while True:
            iters += 1
            if iters > max_iter:
                raise NonConvergence(
                    f"rate-distortion solver exceeded {max_iter} iterations"
                )
            V = A @ q
            obj = float(-(mu * np.log(V)).sum())
            if obj > prev_obj + 1e-12:
                raise NonConvergence("inner objective increased; numerical failure")
            new_q = q * ((mu / V) @ A)
            delta = float(np.abs(new_q - q).max())
            q = new_q
            if delta < 1e-13 or prev_obj - obj < 1e-15:
                prev_obj = obj
                break
            prev_obj = obj
        V = A @ q
        P = A * q[None, :] / V[:, None]
        D = float((mu[:, None] * P * C).sum())
        term = np.zeros_like(P)
        nz = P > 0
        qs = np.broadcast_to(q, P.shape)
        term[nz] = P[nz] * np.log(P[nz] / qs[nz])
        R = float((mu[:, None] * term).sum())
        return R, D, q

    q = np.full(len(ys), 1.0 / len(ys))
    s_hi = 0.0  # D(s_hi) -> d_max > d
    s_lo = -1.0
    while True:
        R, D, q = solve_slope(s_lo, q)
        if D <= d:
            break
        s_lo *= 2.0
        if s_lo < -1e9:
            raise NonConvergence("slope search ran away; distortion target too small")

    best = (R, D, s_lo)
    for _ in range(200):
        s_mid = 0.5 * (s_lo + s_hi)
        R, D, q = solve_slope(s_mid, q)
        if D <= d:
            s_lo = s_mid
            best = (R, D, s_mid)
        else:
            s_hi = s_mid
        if abs(D - d) <= tol * max(1.0, d_max):
            best = (R, D, s_mid)
            break
    R, D, s = best
    tangent = R + s * (d - D)  # convexity: a lower bound at the exact target
    return max(0.0, tangent / _LN2)


# ---------------------------------------------------------------------------
# information radius (capacity of the index -> cell channel)


@dataclass(frozen=True)
class CapacityProblem:
    """Rows are the cell distributions of the family members; the capacity
    of the member -> cell channel is the family's projected information
    radius."""

    rows: tuple  # tuple of tuples of floats
    labels: tuple = ()

    def __post_init__(self) -> None:
        if not self.rows:
            raise ValueError("at least one row required")
        width = len(self.rows[0])
        for r in self.rows:
            if len(r) != width:
                raise ValueError("rows must share the same cell set")
            if any(v < -1e-15 for v in r):
                raise ValueError("negative cell mass")
            if abs(sum(r) - 1.0) > 1e-9:
                raise ValueError(f"row mass {sum(r)} is not 1")

    @property
    def has_shared_support(self) -> bool:
        """True when some cell carries mass from two different rows; when
        False the radius is exactly log2(#rows)."""
        for j in range(len(self.rows[0])):
            if sum(1 for r in self.rows if r[j] > 0) > 1:
                return True
        return False


def projected_info_radius(
    problem: CapacityProblem, *, tol: float = 1e-6, max_iter: int = 100_000
) -> float:
    """Capacity of the member -> cell channel in bits, from below.

    The capacity iteration keeps the sandwich I <= C <= max_i D_i; iteration
    stops when the sandwich width is under ``tol`` bits and the lower end is
    returned. The iterate sequence is checked to be nondecreasing.
    """
    rows = [list(r) for r in problem.rows]
    m = len(rows)
    width = len(rows[0])
    p = [1.0 / m] * m
    prev_I = -math.inf
    for _ in range(max_iter):
        q = [sum(p[i] * rows[i][j] for i in range(m)) for j in range(width)]
        D = []
        for i in range(m):
            acc = 0.0
            for j in range(width):
                w = rows[i][j]
                if w > 0:
                    acc += w * math.log(w / q[j])
            D.append(acc)
        I = sum(p[i] * D[i] for i in range(m))
        if I < prev_I - 1e-12:
            raise NonConvergence("capacity iterate decreased; numerical failure")
        prev_I = I
        upper = max(D)
        if (upper - I) / _LN2 <= tol:
            return I / _LN2
        weights = [p[i] * math.exp(D[i] - upper) for i in range(m)]
        total = sum(weights)
        p = [wgt / total for wgt in weights]
    raise NonConvergence(f"capacity iteration exceeded {max_iter} iterations")


def capacity_problem_from_family(
    family: Sequence[SourcePmf], partition, n: int = 1
) -> CapacityProblem:
    """Project each family member through a partition into a capacity row.

    ``partition`` is a TailPartitionIndex (single-letter; finite-support
    members project exactly, head cell plus singleton tail cells) or a
    BlockPartition over length-n blocks (cell mass is the product-pmf mass).
    """
    rows = []
    if isinstance(partition, TailPartitionIndex):
        if n != 1:
            raise ValueError("tail partitions here are single-letter objects")
        k = partition.k
        top = 0
        for pmf in family:
            if pmf.tail is not None:
                raise ValueError("exact projection needs finite-support members")
            top = max(top, pmf.max_explicit())
        for pmf in family:
            row = [float(head_mass(pmf, k))]
            row.extend(float(pmf.mass_at(z)) for z in range(k + 1, top + 1))
            rows.append(tuple(row))
    elif isinstance(partition, BlockPartition):
        for pmf in family:
            row = []
            for cell in partition.cells:
                acc = Fraction(0)
                for block in cell:
                    acc += math.prod(
                        (Fraction(pmf.mass_at(s)) for s in block), start=Fraction(1)
                    )
                row.append(float(acc))
            total = sum(row)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(
                    "partition does not capture the member's block mass "
                    f"(got {total})"
                )
            rows.append(tuple(row))
    else:
        raise TypeError("partition must be a TailPartitionIndex or BlockPartition")
    return CapacityProblem(rows=tuple(rows))


# ---------------------------------------------------------------------------
# disjoint subfamilies


@dataclass(frozen=True)
class DisjointFamily:
    """Finite-support members on consecutive disjoint segments, each the
    envelope renormalized on its segment, with a fixed symbol gap between
    segments."""

    members: tuple
    segments: tuple  # (start, end) inclusive
    spacing: int


def disjoint_family_builder(
    env: EnvelopeSpec,
    m: int,
    spacing: int = 0,
    *,
    start: int = 1,
    max_symbol: int = 1_000_000,
) -> DisjointFamily:
    """Greedily cut m disjoint segments, each with envelope mass >= 1.

    Every member is dominated by the envelope (its normalizer is >= 1).
    With the spacing above twice the per-letter budget radius, no feasible
    cell of a distortion-respecting partition can touch two segments, which
    is what makes the family's projected radius equal log2(m) exactly for
    singleton partitions.
    """
    if m < 1 or spacing < 0 or start < 1:
        raise ValueError("m >= 1, spacing >= 0, start >= 1 required")
    members = []
    segments = []
    x = start
    for _ in range(m):
        seg_start = x
        total = 0
        values = []
        while True:
            if x > max_symbol:
                raise WindowTooSmall(
                    f"ran past symbol {max_symbol} while building segment "
                    f"{len(segments) + 1} of {m}"
                )
            v = env.value_at(x)
            if float(v) <= 0:
                raise WindowTooSmall(
                    f"envelope support ended inside segment {len(segments) + 1}"
                )
            values.append(v)
            total = total + v
            x += 1
            if total >= 1:
                break
        seg_end = x - 1
        probs = tuple(v / total for v in values)
        members.append(SourcePmf(seg_start, probs, None))
        segments.append((seg_start, seg_end))
        x += spacing
    return DisjointFamily(tuple(members), tuple(segments), spacing)


# ---------------------------------------------------------------------------
# condition report


@dataclass(frozen=True)
class ConditionRow:
    """One block length's worth of evidence for the three universality
    preconditions: an exact cover certificate, a finite-subfamily radius
    lower bound, and the worst projected-entropy gap over the subfamily."""

    n: int
    partition_kind: str
    cover_ok: Optional[bool]
    radius_lower: Optional[float]
    entropy_gap: Optional[float]
    flag: str = ""


def _singleton_partition(space: Sequence[tuple]) -> BlockPartition:
    cells = tuple((b,) for b in space)
    return BlockPartition(cells=cells, prototypes=tuple(space), space=tuple(space))


def grid_block_partition(
    window: Sequence[int],
    n: int,
    spec: DistortionSpec,
    level: RationalDistortionLevel,
) -> BlockPartition:
    """The per-letter grid partition materialized on a finite window; the
    prototype joins its cell when quantization maps it outside the space."""
    from .codes import grid_radius

    r = grid_radius(spec, level)
    width = 2 * r + 1
    space = list(itertools.product(sorted(set(window)), repeat=n))
    groups: Dict[tuple, List[tuple]] = {}
    for b in space:
        proto = tuple(((s - 1) // width) * width + 1 + r for s in b)
        groups.setdefault(proto, []).append(b)
    cells = []
    protos = []
    for proto in sorted(groups):
        members = set(groups[proto])
        members.add(proto)
        cells.append(tuple(sorted(members)))
        protos.append(proto)
    covered = set().union(*[set(c) for c in cells])
    return BlockPartition(
        cells=tuple(cells), prototypes=tuple(protos), space=tuple(sorted(covered))
    )


def universality_conditions_report(
    spec: DistortionSpec,
    level: RationalDistortionLevel,
    subfamily: Sequence[SourcePmf],
    n_values: Sequence[int],
    *,
    partition_kind: str = "singleton",
    partitions: Optional[Dict[int, BlockPartition]] = None,
    space_budget: int = 4096,
    brute_budget: int = _BRUTE_BUDGET,
    radius_tol: float = 1e-6,
) -> List[ConditionRow]:
    """Per-block-length evidence rows for a finite subfamily.

    Every member must have finite support. The partition per block length
    is built by ``partition_kind`` ("singleton" or "grid"), or taken from
    ``partitions`` (a mapping from n) when supplied. Rows whose block space
    exceeds ``space_budget`` are flagged "budget" with no values; rows
    where only the brute-force reference is out of reach keep the other
    two entries and are flagged "partial".
    """
    if partitions is None and partition_kind not in ("singleton", "grid"):
        raise ValueError(f"unknown partition kind {partition_kind!r}")
    support: set = set()
    for pmf in subfamily:
        if pmf.tail is not None:
            raise ValueError("the exact report needs finite-support members")
        support.update(
            x
            for x in range(pmf.support_floor, pmf.max_explicit() + 1)
            if float(pmf.mass_at(x)) > 0
        )
    window = tuple(sorted(support))
    rows: List[ConditionRow] = []
    for n in n_values:
        kind = partition_kind if partitions is None else "supplied"
        size = len(window) ** n
        if size > space_budget:
            rows.append(ConditionRow(n, kind, None, None, None, flag="budget"))
            continue
        if partitions is not None:
            part = partitions[n]
        elif partition_kind == "grid":
            part = grid_block_partition(window, n, spec, level)
        else:
            space = list(itertools.product(window, repeat=n))
            part = _singleton_partition(space)
        cover_ok = part.verify_cover(spec, level)
        problem = capacity_problem_from_family(subfamily, part, n=n)
        radius = projected_info_radius(problem, tol=radius_tol) / n

        gap: Optional[float] = None
        flag = ""
        if size > brute_budget:
            flag = "partial"
        else:
            worst = 0.0
            for i, pmf in enumerate(subfamily):
                row = problem.rows[i]
                H = -sum(v * math.log2(v) for v in row if v > 0) / n
                inst = FiniteInstance.from_pmf(pmf, window, n, spec, level)
                ref = brute_force_operational_rate(inst, budget=brute_budget)
                worst = max(worst, H - ref.rate)
            gap = worst
        rows.append(ConditionRow(n, kind, cover_ok, radius, gap, flag=flag))
    return rows


# ---------------------------------------------------------------------------
# subfamilies for sweeps


def envelope_subfamily(
    env: EnvelopeSpec, size: int, seed, *, window: int = 64
) -> List[SourcePmf]:
    """The envelope distribution plus seeded random dominated members."""
    if size < 1:
        raise ValueError("size >= 1 required")
    out = [envelope_distribution(env)]
    rng = np.random.default_rng(seed)
    for _ in range(size - 1):
        out.append(sample_envelope_member(env, rng, window=window))
    return out
