"""Probability models on the integer alphabet.

Explicit pmfs with optional analytic tails, envelope functions and the
families they dominate, tail partitions, sampling, and the entropy /
divergence primitives (full and projected) that the codec and the oracles
are measured against.

Conventions: symbols are integers >= the declared support floor (the codec
alphabet starts at 1), logs are base 2, probabilities are exact Fractions
whenever the model permits and double precision backed by high-precision
series (mpmath) otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Union

import mpmath
import numpy as np

from .errors import (
    AbsoluteContinuityViolated,
    ConfigInvalid,
    DivergentEntropy,
    EntropySeriesDiverges,
    IncomparableTails,
    NotSummable,
)

Number = Union[int, float, Fraction]

_LN2 = math.log(2.0)

# Series evaluated through mpmath run at this precision; results are rounded
# to double at the boundary, so certified error stays far below 1e-12.
_DPS = 40


def _mp(x: Number) -> mpmath.mpf:
    if isinstance(x, Fraction):
        return mpmath.mpf(x.numerator) / x.denominator
    return mpmath.mpf(x)


def rationalize_up(x: Number, digits: int = 18) -> Fraction:
    """Smallest Fraction with denominator 10**digits that is >= x.

    Used to replace transcendental coding-distribution parameters with exact
    rationals that still dominate the quantity they stand in for.
    """
    if isinstance(x, (int, Fraction)):
        return Fraction(x)
    scale = 10**digits
    with mpmath.workdps(_DPS):
        v = mpmath.mpf(x) * scale
        num = int(mpmath.ceil(v + mpmath.mpf(10) ** (-10)))
    return Fraction(num, scale)


# ---------------------------------------------------------------------------
# analytic tails


@dataclass(frozen=True)
class GeometricTail:
    """mass(x) = coeff * ratio**x for all x >= start."""

    start: int
    coeff: Number
    ratio: Number

    def __post_init__(self) -> None:
        if not (0 < float(self.ratio) < 1):
            raise ValueError("geometric tail needs ratio in (0,1)")

    def mass_at(self, x: int) -> Number:
        return self.coeff * self.ratio**x

    def suffix_mass(self, k: int) -> Number:
        """Sum of mass over {max(k, start), ...} in closed form."""
        k = max(k, self.start)
        return self.coeff * self.ratio**k / (1 - self.ratio)

    def suffix_first_moment(self, k: int) -> float:
        """Sum of x * mass(x) over the suffix."""
        k = max(k, self.start)
        c, r = float(self.coeff), float(self.ratio)
        return c * r**k * (k / (1 - r) + r / (1 - r) ** 2)

    def suffix_entropy(self, k: int) -> float:
        """Sum of mass(x) * log2(1/mass(x)) over the suffix, in bits."""
        c, r = float(self.coeff), float(self.ratio)
        s = float(self.suffix_mass(k))
        return -math.log2(c) * s - math.log2(r) * self.suffix_first_moment(k)


@dataclass(frozen=True)
class PowerTail:
    """mass(x) = coeff * x**-p for all x >= start (p > 1 for a finite sum)."""

    start: int
    coeff: float
    p: float

    def mass_at(self, x: int) -> float:
        return self.coeff * float(x) ** (-self.p)

    def suffix_mass(self, k: int) -> float:
        k = max(k, self.start)
        if self.p <= 1:
            raise NotSummable(f"power tail with p={self.p} has infinite mass")
        with mpmath.workdps(_DPS):
            return float(self.coeff * mpmath.zeta(self.p, k))

    def suffix_log_moment(self, k: int) -> float:
        """Sum of mass(x) * log2(x) over the suffix, via the zeta derivative."""
        k = max(k, self.start)
        with mpmath.workdps(_DPS):
            # sum_{x>=k} x^-p ln(x) = -zeta'(p, k)
            val = -mpmath.zeta(self.p, k, 1)
            return float(self.coeff * val / mpmath.ln(2))

    def suffix_entropy(self, k: int) -> float:
        s = self.suffix_mass(k)
        if not math.isfinite(s):
            raise DivergentEntropy("power tail mass diverges")
        return self.p * self.suffix_log_moment(max(k, self.start)) - math.log2(self.coeff) * s


Tail = Union[GeometricTail, PowerTail]


# ---------------------------------------------------------------------------
# pmfs


@dataclass(frozen=True)
class SourcePmf:
    """A pmf on integers >= support_floor.

    ``probs[i]`` is the mass of symbol ``support_floor + i``; an optional
    analytic tail covers every symbol beyond the explicit range. Total mass
    must be 1 within 1e-12.
    """

    support_floor: int
    probs: tuple
    tail: Optional[Tail] = None

    def __post_init__(self) -> None:
        if any(float(p) < 0 for p in self.probs):
            raise ValueError("negative probability")
        if self.tail is not None and self.tail.start != self.tail_start():
            raise ValueError("tail must start right after the explicit support")
        total = float(sum(float(p) for p in self.probs))
        if self.tail is not None:
            total += float(self.tail.suffix_mass(self.tail.start))
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"pmf mass {total} not 1 within 1e-12")

    def tail_start(self) -> int:
        return self.support_floor + len(self.probs)

    def mass_at(self, x: int) -> Number:
        if x < self.support_floor:
            return 0
        i = x - self.support_floor
        if i < len(self.probs):
            return self.probs[i]
        if self.tail is not None:
            return self.tail.mass_at(x)
        return 0

    def suffix_mass(self, k: int) -> Number:
        """Mass of {k, k+1, ...} with the tail contribution in closed form."""
        expl = sum(
            (p for x, p in self._explicit() if x >= k),
            start=Fraction(0) if self._rational() else 0.0,
        )
        if self.tail is not None:
            return expl + self.tail.suffix_mass(self.tail.start if k < self.tail.start else k)
        return expl

    def max_explicit(self) -> int:
        return self.support_floor + len(self.probs) - 1

    def _explicit(self):
        for i, p in enumerate(self.probs):
            yield self.support_floor + i, p

    def _rational(self) -> bool:
        return all(isinstance(p, (int, Fraction)) for p in self.probs) and (
            self.tail is None
            or (
                isinstance(self.tail, GeometricTail)
                and isinstance(self.tail.coeff, (int, Fraction))
                and isinstance(self.tail.ratio, (int, Fraction))
            )
        )

    # convenience constructors ------------------------------------------------

    @staticmethod
    def point_mass(x: int) -> "SourcePmf":
        return SourcePmf(x, (Fraction(1),))

    @staticmethod
    def uniform(lo: int, hi: int) -> "SourcePmf":
        n = hi - lo + 1
        return SourcePmf(lo, tuple(Fraction(1, n) for _ in range(n)))

    @staticmethod
    def geometric(ratio: Fraction = Fraction(1, 2), floor: int = 1) -> "SourcePmf":
        """mass(x) = (1-ratio)/ratio * ratio**x for x >= floor; ratio=1/2 gives 2**-x."""
        r = Fraction(ratio)
        coeff = (1 - r) / r**floor
        return SourcePmf(floor, (), GeometricTail(floor, coeff, r))

    @staticmethod
    def from_weights(floor: int, weights: Sequence[Number]) -> "SourcePmf":
        fracs = [Fraction(w) for w in weights]
        if any(w < 0 for w in fracs):
            raise ConfigInvalid("weights must be nonnegative")
        tot = sum(fracs)
        if tot <= 0:
            raise ConfigInvalid("weights must have positive total")
        return SourcePmf(floor, tuple(w / tot for w in fracs))


class Suffix:
    """The symbol set {k, k+1, ...}; accepted wherever a symbol set is."""

    def __init__(self, k: int):
        self.k = k


def pmf_mass(pmf: SourcePmf, symbols: Union[Suffix, Iterable[int]]) -> Number:
    """Exact mass of a finite symbol set or of a suffix set."""
    if isinstance(symbols, Suffix):
        return pmf.suffix_mass(symbols.k)
    acc: Number = Fraction(0)
    for x in set(symbols):
        acc = acc + pmf.mass_at(x)
    return acc


# ---------------------------------------------------------------------------
# envelopes


@dataclass(frozen=True)
class EnvelopeSpec:
    """A nonnegative envelope function f on the positive integers.

    kinds:
      - polynomial: f(x) = x**-p, p >= 0 (summable iff p > 1)
      - exponential: f(x) = K * b**x where b is either an exact rational
        ``ratio`` or exp(-alpha); summable for any b < 1
      - tabulated: finite table on {1..len(table)}, zero beyond (summable)

    The family an envelope induces is every pmf it pointwise dominates;
    membership is ``envelope_contains``.
    """

    kind: str
    p: Optional[float] = None
    scale: Optional[Number] = None  # K for the exponential kind
    alpha: Optional[float] = None
    ratio: Optional[Fraction] = None
    table: Optional[tuple] = None
    name: str = ""

    def __post_init__(self) -> None:
        if self.kind == "polynomial":
            if self.p is None or self.p < 0:
                raise ValueError("polynomial envelope needs p >= 0")
        elif self.kind == "exponential":
            if self.scale is None or float(self.scale) <= 0:
                raise ValueError("exponential envelope needs K > 0")
            if (self.alpha is None) == (self.ratio is None):
                raise ValueError("exponential envelope needs exactly one of alpha, ratio")
            if self.alpha is not None and self.alpha <= 0:
                raise ValueError("alpha must be positive")
            if self.ratio is not None and not 0 < self.ratio < 1:
                raise ValueError("ratio must be in (0,1)")
        elif self.kind == "tabulated":
            if not self.table or any(float(v) < 0 for v in self.table):
                raise ValueError("tabulated envelope needs a nonnegative table")
        else:
            raise ValueError(f"unknown envelope kind {self.kind!r}")

    # built-ins ---------------------------------------------------------------

    @staticmethod
    def geometric() -> "EnvelopeSpec":
        """f(x) = 2**-x: the tightest built-in (it is itself a pmf)."""
        return EnvelopeSpec(
            "exponential", scale=Fraction(1), ratio=Fraction(1, 2), name="geometric"
        )

    @staticmethod
    def polynomial(p: float) -> "EnvelopeSpec":
        return EnvelopeSpec("polynomial", p=p, name=f"polynomial(p={p:g})")

    @staticmethod
    def exponential(scale: Number, alpha: float) -> "EnvelopeSpec":
        return EnvelopeSpec(
            "exponential",
            scale=scale,
            alpha=alpha,
            name=f"exponential(K={float(scale):g},alpha={alpha:g})",
        )

    @staticmethod
    def tabulated(table: Sequence[Number]) -> "EnvelopeSpec":
        return EnvelopeSpec(
            "tabulated", table=tuple(Fraction(v) for v in table), name="tabulated"
        )

    # evaluation --------------------------------------------------------------

    def value_at(self, x: int) -> Number:
        """f(x) for x >= 1; exact where the parameters are exact."""
        if x < 1:
            raise ValueError("envelopes are defined on positive integers")
        if self.kind == "polynomial":
            if self.p == int(self.p) and self.p >= 0:
                return Fraction(1, x ** int(self.p))
            return float(x) ** (-self.p)
        if self.kind == "exponential":
            if self.ratio is not None:
                return Fraction(self.scale) * Fraction(self.ratio) ** x
            return float(self.scale) * math.exp(-self.alpha * x)
        assert self.table is not None
        return self.table[x - 1] if x <= len(self.table) else Fraction(0)

    @property
    def summable(self) -> bool:
        if self.kind == "polynomial":
            return self.p > 1
        return True

    def suffix_mass(self, k: int) -> Number:
        """Sum of f over {k, k+1, ...}; exact for rational-parameter kinds."""
        if not self.summable:
            raise NotSummable(f"envelope {self.name or self.kind} is not summable")
        k = max(k, 1)
        if self.kind == "polynomial":
            with mpmath.workdps(_DPS):
                return float(mpmath.zeta(self.p, k))
        if self.kind == "exponential":
            if self.ratio is not None:
                r = Fraction(self.ratio)
                return Fraction(self.scale) * r**k / (1 - r)
            with mpmath.workdps(_DPS):
                r = mpmath.e ** (-self.alpha)
                return float(self.scale * r**k / (1 - r))
        assert self.table is not None
        return sum((v for i, v in enumerate(self.table, start=1) if i >= k), Fraction(0))

    def support_end(self) -> Optional[int]:
        """Last symbol with f > 0, or None when the support is infinite."""
        if self.kind != "tabulated":
            return None
        last = 0
        for i, v in enumerate(self.table, start=1):
            if v > 0:
                last = i
        return last

    def serialize_items(self) -> list:
        items = [("kind", self.kind)]
        if self.kind == "polynomial":
            items.append(("p", repr(self.p)))
        elif self.kind == "exponential":
            items.append(("K", str(self.scale)))
            if self.ratio is not None:
                items.append(("ratio", str(self.ratio)))
            else:
                items.append(("alpha", repr(self.alpha)))
        else:
            items.append(("table", " ".join(str(v) for v in self.table)))
        if self.name:
            items.append(("name", self.name))
        return items


def builtin_envelope(name: str) -> EnvelopeSpec:
    """The three envelopes every experiment in this repo is run against."""
    if name == "geometric":
        return EnvelopeSpec.geometric()
    if name == "polynomial":
        return EnvelopeSpec.polynomial(2.0)
    if name == "exponential":
        return EnvelopeSpec.exponential(2, 1.0)
    raise ValueError(f"unknown built-in envelope {name!r}")


def tail_start(env: EnvelopeSpec) -> int:
    """Smallest k >= 1 such that f restricted to {k, k+1, ...} has mass <= 1."""
    if not env.summable:
        raise NotSummable("tail start undefined for non-summable envelopes")
    k = 1
    while _compare_mass(env.suffix_mass(k), 1) > 0:
        k += 1
    return k


def _compare_mass(value: Number, threshold: Number) -> int:
    """Sign of value - threshold, trusting floats only away from the boundary."""
    if isinstance(value, Fraction):
        diff = value - Fraction(threshold)
        return (diff > 0) - (diff < 0)
    diff = float(value) - float(threshold)
    if abs(diff) < 1e-25:
        raise ArithmeticError(
            "envelope mass indistinguishable from the threshold at double precision"
        )
    return 1 if diff > 0 else -1


def envelope_distribution(env: EnvelopeSpec, explicit_upto: int = 64) -> SourcePmf:
    """The pmf equal to f on its tail with the leftover packed just below.

    The leftover mass 1 - sum_{x >= t} f(x) sits at t-1 where t is
    ``tail_start(env)``; below t-1 the pmf is zero. This is the distribution
    whose projected entropy dominates the whole dominated family on tail
    partitions (eventually in k), and the codec's second stage codes against
    (a rationalized version of) it.
    """
    t = tail_start(env)
    leftover = 1 - env.suffix_mass(t)
    floor = t - 1 if _nonzero(leftover) else t
    hi = max(explicit_upto, floor)
    probs: list = []
    for x in range(floor, hi + 1):
        if x == t - 1:
            probs.append(leftover)
        else:
            probs.append(env.value_at(x))
    tail = _envelope_tail(env, hi + 1)
    if tail is None:
        # tabulated: finish the table explicitly
        end = env.support_end() or 0
        for x in range(hi + 1, end + 1):
            probs.append(env.value_at(x))
    return SourcePmf(floor, tuple(probs), tail)


def _nonzero(v: Number) -> bool:
    return (v != 0) if isinstance(v, Fraction) else abs(float(v)) > 1e-15


def _envelope_tail(env: EnvelopeSpec, start: int) -> Optional[Tail]:
    if env.kind == "polynomial":
        return PowerTail(start, 1.0, env.p)
    if env.kind == "exponential":
        if env.ratio is not None:
            return GeometricTail(start, Fraction(env.scale), Fraction(env.ratio))
        return GeometricTail(start, float(env.scale), math.exp(-env.alpha))
    return None


def tail_threshold(env: EnvelopeSpec, n: int) -> int:
    """Smallest k >= 1 whose envelope-distribution tail beyond k has mass < 1/n.

    Strict inequality, decided exactly for rational-parameter envelopes;
    nondecreasing in n. This is the truncation schedule the redundancy-trend
    experiments run with.
    """
    if n < 1:
        raise ValueError("n >= 1 required")
    mu = envelope_distribution(env, explicit_upto=8)
    k = 1
    while _compare_mass(mu.suffix_mass(k + 1), Fraction(1, n)) >= 0:
        k += 1
    return k


def maxent_threshold(env: EnvelopeSpec) -> int:
    """Smallest safe k for the max-entropy property of the envelope distribution.

    max(tail_start, first k with tail mass beyond k under 1/2): from this k on,
    the envelope distribution maximizes projected entropy over the dominated
    family on tail partitions.
    """
    return max(tail_start(env), tail_threshold(env, 2))


def envelope_contains(env: EnvelopeSpec, pmf: SourcePmf, horizon: int = 4096) -> bool:
    """Pointwise domination check mu(x) <= f(x) for all x.

    Explicit symbols are compared directly (1e-12 slack for float values).
    An analytic pmf tail is compared to the envelope symbolically where the
    decay families are comparable, else pointwise up to ``horizon`` together
    with a dominance certificate beyond it; raises IncomparableTails when no
    certificate applies.
    """
    slack = 1e-12
    for x, p in pmf._explicit():
        if x < 1:
            continue  # envelope constrains positive symbols only
        fx = env.value_at(x)
        if isinstance(p, Fraction) and isinstance(fx, Fraction):
            if p > fx:
                return False
        elif float(p) > float(fx) + slack:
            return False
    if pmf.tail is None:
        return True
    t = pmf.tail
    if env.kind == "tabulated":
        # zero beyond the table: any positive tail eventually violates
        end = env.support_end() or 0
        for x in range(t.start, end + 1):
            if float(t.mass_at(x)) > float(env.value_at(x)) + slack:
                return False
        return not (float(t.coeff) > 0)
    if isinstance(t, GeometricTail):
        if env.kind == "exponential":
            r_env = env.ratio if env.ratio is not None else math.exp(-env.alpha)
            c_cmp = _compare_float(t.ratio, r_env)
            if c_cmp <= 0:
                # pmf decays at least as fast: domination at t.start decides
                return float(t.mass_at(t.start)) <= float(env.value_at(t.start)) + slack
            return False  # slower decay always escapes the envelope
        # geometric tail under a polynomial envelope: certify the crossover
        if env.p is None:
            raise IncomparableTails("no comparison rule for this envelope kind")
        x = t.start
        while x <= max(horizon, t.start):
            if float(t.mass_at(x)) > float(env.value_at(x)) + slack:
                return False
            # beyond p/ln(1/ratio), the log-gap grows monotonically
            if x > env.p / -math.log(float(t.ratio)) and float(t.mass_at(x)) <= float(
                env.value_at(x)
            ):
                return True
            x = x * 2 if x > 0 else 1
        raise IncomparableTails("horizon exhausted before a dominance certificate")
    if isinstance(t, PowerTail):
        if env.kind == "polynomial":
            if t.p > env.p or (t.p == env.p and float(t.coeff) <= 1 + slack):
                return float(t.mass_at(t.start)) <= float(env.value_at(t.start)) + slack or all(
                    float(t.mass_at(x)) <= float(env.value_at(x)) + slack
                    for x in range(t.start, horizon)
                )
            return False
        return False  # power tail under an exponential envelope escapes eventually
    raise IncomparableTails("unknown tail type")


def _compare_float(a: Number, b: Number) -> int:
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return (a > b) - (a < b)
    fa, fb = float(a), float(b)
    if abs(fa - fb) <= 1e-15 * max(1.0, abs(fa)):
        return 0
    return 1 if fa > fb else -1


# ---------------------------------------------------------------------------
# tail partitions and projected quantities


@dataclass(frozen=True)
class TailPartitionIndex:
    """The partition {{..k}, {k+1}, {k+2}, ...}: merged head, singleton tail."""

    k: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("tail partition index must be >= 1")


def entropy(pmf: SourcePmf) -> float:
    """Shannon entropy in bits; analytic tails contribute in closed form."""
    acc = 0.0
    for _, p in pmf._explicit():
        fp = float(p)
        if fp > 0:
            acc -= fp * math.log2(fp)
    if pmf.tail is not None:
        acc += pmf.tail.suffix_entropy(pmf.tail.start)
    if not math.isfinite(acc):
        raise DivergentEntropy("entropy series did not converge")
    return acc


def head_mass(pmf: SourcePmf, k: int) -> Number:
    """Mass of {x <= k} (the merged cell of the k-th tail partition)."""
    one = Fraction(1) if pmf._rational() else 1.0
    return one - pmf.suffix_mass(k + 1)


def projected_entropy(pmf: SourcePmf, partition, n: int = 1) -> float:
    """Entropy of the pmf pushed through a partition, in bits.

    ``partition`` is a TailPartitionIndex, or an iterable of finite symbol
    cells (length-1 tuples of ints, or blocks of length n for product pmfs).
    """
    if isinstance(partition, TailPartitionIndex):
        k = partition.k
        acc = 0.0
        hm = float(head_mass(pmf, k))
        if hm > 0:
            acc -= hm * math.log2(hm)
        # singleton tail symbols: explicit ones directly, analytic tail in closed form
        for x, p in pmf._explicit():
            fp = float(p)
            if x > k and fp > 0:
                acc -= fp * math.log2(fp)
        if pmf.tail is not None:
            acc += pmf.tail.suffix_entropy(max(k + 1, pmf.tail.start))
        return acc
    cells = _cells_of(partition)
    acc = 0.0
    for cell in cells:
        m = float(_cell_mass(pmf, cell, n))
        if m > 0:
            acc -= m * math.log2(m)
    return acc


def _cells_of(partition):
    cells = getattr(partition, "cells", partition)
    return list(cells)


def _cell_mass(pmf: SourcePmf, cell, n: int) -> float:
    total = 0.0
    for member in cell:
        if isinstance(member, (int, np.integer)):
            total += float(pmf.mass_at(int(member)))
        else:
            prod = 1.0
            for sym in member:
                prod *= float(pmf.mass_at(int(sym)))
            total += prod
    return total


def projected_divergence(p: SourcePmf, q: SourcePmf, partition) -> float:
    """sum over cells of p(A) log2 p(A)/q(A); >= 0, <= the full divergence."""
    if isinstance(partition, TailPartitionIndex):
        k = partition.k
        acc = _div_term(float(head_mass(p, k)), float(head_mass(q, k)))
        top = p.max_explicit()
        for x in range(max(k + 1, p.support_floor), top + 1):
            acc += _div_term(float(p.mass_at(x)), float(q.mass_at(x)))
        if p.tail is not None:
            start = max(k + 1, p.tail.start)
            acc += _tail_divergence(p, q, start)
        return acc
    acc = 0.0
    for cell in _cells_of(partition):
        acc += _div_term(_cell_mass(p, cell, 1), _cell_mass(q, cell, 1))
    return acc


def _div_term(pm: float, qm: float) -> float:
    if pm <= 0:
        return 0.0
    if qm <= 0:
        raise AbsoluteContinuityViolated("reference mass 0 where p has mass")
    return pm * math.log2(pm / qm)


def _tail_divergence(p: SourcePmf, q: SourcePmf, start: int) -> float:
    """sum_{x >= start} p(x) log2 p(x)/q(x) for analytic-against-analytic tails."""
    pt = p.tail
    qt = q.tail if q.tail is not None and q.tail.start <= start else None
    if qt is None:
        # explicit q beyond start: only valid when p's tail is zero there; the
        # divergence is then a finite sum
        top = q.max_explicit()
        acc = 0.0
        for x in range(start, top + 1):
            acc += _div_term(float(pt.mass_at(x)), float(q.mass_at(x)))
        if float(pt.suffix_mass(top + 1)) > 0:
            raise AbsoluteContinuityViolated("p tail extends beyond q support")
        return acc
    if isinstance(pt, GeometricTail) and isinstance(qt, GeometricTail):
        cp, rp = float(pt.coeff), float(pt.ratio)
        cq, rq = float(qt.coeff), float(qt.ratio)
        s = float(pt.suffix_mass(start))
        m1 = pt.suffix_first_moment(start)
        return math.log2(cp / cq) * s + math.log2(rp / rq) * m1
    if isinstance(pt, PowerTail) and isinstance(qt, PowerTail):
        s = pt.suffix_mass(start)
        lm = pt.suffix_log_moment(start)
        return math.log2(pt.coeff / qt.coeff) * s + (qt.p - pt.p) * lm
    # mixed families: converging alternating-free series, summed adaptively
    with mpmath.workdps(_DPS):
        val = mpmath.nsum(
            lambda x: _mp(pt.mass_at(int(x)))
            * mpmath.log(_mp(pt.mass_at(int(x))) / _mp(qt.mass_at(int(x))))
            / mpmath.ln(2),
            [start, mpmath.inf],
        )
        return float(val)


def divergence(p: SourcePmf, q: SourcePmf) -> float:
    """Full Kullback-Leibler divergence in bits (finite-support p only)."""
    if p.tail is not None:
        return _tail_divergence(p, q, p.tail.start) + sum(
            _div_term(float(pm), float(q.mass_at(x))) for x, pm in p._explicit()
        )
    return sum(_div_term(float(pm), float(q.mass_at(x))) for x, pm in p._explicit())


# ---------------------------------------------------------------------------
# envelope tail series (the redundancy-rate engine room)


def tail_ratio_series(env: EnvelopeSpec, k: int) -> float:
    """I_k / (S_k log2(1/S_k)) where, over the suffix {k, k+1, ...},
    I_k = sum f log2(1/f) and S_k = sum f.

    The decay of this ratio is what turns envelope tail mass into a
    redundancy rate; k must be at or beyond the envelope's tail start so the
    suffix is untouched by leftover packing.
    """
    if not env.summable:
        raise EntropySeriesDiverges("non-summable envelope")
    if k < tail_start(env):
        raise ValueError("k below the envelope tail start")
    S = float(env.suffix_mass(k))
    if not (0 < S < 1):
        raise ValueError("suffix mass must be in (0,1) for the ratio")
    I = envelope_tail_entropy(env, k)
    return I / (S * math.log2(1 / S))


def envelope_tail_entropy(env: EnvelopeSpec, k: int) -> float:
    """sum_{x >= k} f(x) log2(1/f(x)) with certified series evaluation."""
    if env.kind == "polynomial":
        if env.p <= 1:
            raise EntropySeriesDiverges("p <= 1")
        with mpmath.workdps(_DPS):
            # sum x^-p * p*log2(x)
            return float(env.p * (-mpmath.zeta(env.p, k, 1)) / mpmath.ln(2))
    if env.kind == "exponential":
        K = float(env.scale)
        if env.ratio is not None:
            r = float(env.ratio)
            tail = GeometricTail(k, K, r)
            return tail.suffix_entropy(k)
        with mpmath.workdps(_DPS):
            a = mpmath.mpf(env.alpha)
            r = mpmath.e ** (-a)
            s = K * r**k / (1 - r)
            m1 = K * r**k * (k / (1 - r) + r / (1 - r) ** 2)
            # log2(1/f) = (alpha*x - ln K)/ln 2
            return float((a * m1 - mpmath.ln(K) * s) / mpmath.ln(2))
    table = env.table or ()
    acc = 0.0
    for x, v in enumerate(table, start=1):
        fv = float(v)
        if x >= k and fv > 0:
            acc -= fv * math.log2(fv)
    return acc


# ---------------------------------------------------------------------------
# sampling


def sample_block(pmf: SourcePmf, n: int, rng) -> np.ndarray:
    """An i.i.d. block of n symbols by CDF inversion (int64 array).

    ``rng`` is a numpy Generator or an integer seed. Inversion walks a
    cumulative table over the explicit-plus-cached head and resolves the rare
    deep-tail draws analytically, so heavy (power) tails sample correctly.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    symbols, cdf, tail = _sampling_table(pmf)
    u = rng.random(n)
    idx = np.searchsorted(cdf, u, side="right")
    out = np.empty(n, dtype=np.int64)
    in_table = idx < len(symbols)
    out[in_table] = symbols[idx[in_table]]
    if not in_table.all():
        head_total = cdf[-1] if len(cdf) else 0.0
        for i in np.nonzero(~in_table)[0]:
            out[i] = _invert_tail(tail, float(u[i]), head_total)
    return out


_TABLE_CACHE: dict = {}


def _sampling_table(pmf: SourcePmf):
    key = id(pmf)
    hit = _TABLE_CACHE.get(key)
    if hit is not None and hit[0]() is pmf:
        return hit[1]
    import weakref

    symbols = [x for x, _ in pmf._explicit()]
    masses = [float(p) for _, p in pmf._explicit()]
    tail = pmf.tail
    if tail is not None:
        # extend the table until the remaining tail mass is negligible for
        # vectorized sampling; the analytic path picks up the rest
        x = tail.start
        remaining = float(tail.suffix_mass(x))
        while remaining > 1e-4 and len(symbols) < 200_000:
            m = float(tail.mass_at(x))
            symbols.append(x)
            masses.append(m)
            remaining -= m
            x += 1
    arr = np.array(symbols, dtype=np.int64)
    cdf = np.cumsum(np.array(masses))
    value = (arr, cdf, tail)
    _TABLE_CACHE[key] = (weakref.ref(pmf), value)
    return value


def _invert_tail(tail: Optional[Tail], u: float, head_total: float) -> int:
    if tail is None:
        # float round-off pushed u past the final cumulative value
        raise ValueError("draw beyond finite support")
    target = u - head_total  # mass to place beyond the cached table
    # suffix_mass(start) - suffix_mass(x+1) >= target  <=>  x is reached
    lo = tail.start
    hi = lo + 1
    base = float(tail.suffix_mass(lo))
    while base - float(tail.suffix_mass(hi + 1)) < target:
        hi *= 2
        if hi > 1 << 62:
            return hi  # u indistinguishable from 1 at double precision
    while lo < hi:
        mid = (lo + hi) // 2
        if base - float(tail.suffix_mass(mid + 1)) >= target:
            hi = mid
        else:
            lo = mid + 1
    return lo


def sample_envelope_member(env: EnvelopeSpec, rng, window: int = 64) -> SourcePmf:
    """A random pmf dominated by the envelope, supported on {1..window}.

    Draws mu(x) = U_x * f(x), rescales down when the mass exceeds 1, and
    fills any deficit greedily up to f in symbol order. When the envelope's
    window mass cannot reach 1 (the tight case: total envelope mass <= 1) the
    only dominated pmf is the envelope distribution itself, which is returned.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    f = np.array([float(env.value_at(x)) for x in range(1, window + 1)])
    if f.sum() <= 1 + 1e-12:
        return envelope_distribution(env)
    for _ in range(64):
        mu = rng.random(window) * f
        total = mu.sum()
        if total >= 1.0:
            mu /= total
            break
        deficit = 1.0 - total
        room = f - mu
        for i in range(window):
            add = min(deficit, room[i])
            mu[i] += add
            deficit -= add
            if deficit <= 1e-15:
                break
        if deficit <= 1e-15:
            break
    else:  # pragma: no cover - astronomically unlikely with sane windows
        raise ValueError("could not fill a dominated pmf in this window")
    mu = mu / mu.sum()
    np.minimum(mu, f, out=mu)  # scrub float drift above the envelope
    mu /= mu.sum()
    probs = tuple(float(v) for v in mu)
    return SourcePmf(1, probs)
