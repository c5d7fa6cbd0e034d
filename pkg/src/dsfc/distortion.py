"""Per-letter and per-block distortion on the integer alphabet.

Two per-letter families are supported: absolute error |x - y| and scaled
clipped error K * min(|x - y|, M). Block distortion is the average of
per-letter values; the fidelity criterion the codec enforces is an exact
rational comparison of  n * rho_n(x, xhat)  against  n * d, so there is no
float tolerance anywhere in the accept/reject path.

The truncated cost ties a finite working alphabet to the full one: letters
above a threshold k collapse onto the overflow letter k+1, whose cost
against i <= k is the best cost any true symbol above k could achieve.
Encoding against the truncated cost can only overstate the true distortion,
which is the inequality the codec's guarantee rides on.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import gcd
from typing import Optional, Sequence, Union

import numpy as np

from ._backend import kernels
from .errors import LengthMismatch, LevelOutOfRange

Number = Union[int, Fraction]


@dataclass(frozen=True)
class RationalDistortionLevel:
    """The budget d as an exact positive rational."""

    num: int
    den: int = 1

    def __post_init__(self) -> None:
        if self.den <= 0 or self.num <= 0:
            raise ValueError("distortion level must be a positive rational")
        g = gcd(self.num, self.den)
        object.__setattr__(self, "num", self.num // g)
        object.__setattr__(self, "den", self.den // g)

    @staticmethod
    def parse(text: str) -> "RationalDistortionLevel":
        text = text.strip()
        if "/" in text:
            a, b = text.split("/", 1)
            return RationalDistortionLevel(int(a), int(b))
        return RationalDistortionLevel(int(text), 1)

    def as_fraction(self) -> Fraction:
        return Fraction(self.num, self.den)

    def __str__(self) -> str:
        return f"{self.num}/{self.den}" if self.den != 1 else str(self.num)


@dataclass(frozen=True)
class DistortionSpec:
    """Which per-letter cost is in force.

    kind "absolute": rho(x, y) = |x - y|.
    kind "bounded":  rho(x, y) = scale * min(|x - y|, clip), the scaled
    clipped error with ceiling scale * clip.
    """

    kind: str
    scale: Optional[Number] = None
    clip: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind == "absolute":
            if self.scale is not None or self.clip is not None:
                raise ValueError("absolute distortion takes no parameters")
        elif self.kind == "bounded":
            if self.scale is None or Fraction(self.scale) <= 0:
                raise ValueError("bounded distortion needs scale > 0")
            if not isinstance(self.clip, int) or self.clip < 1:
                raise ValueError("bounded distortion needs integer clip >= 1")
        else:
            raise ValueError(f"unknown distortion kind {self.kind!r}")

    @property
    def max_value(self) -> Optional[Number]:
        """The ceiling scale * clip, or None for the unbounded kind."""
        if self.kind == "bounded":
            return _scaled(self.scale, self.clip)
        return None

    def serialize_items(self) -> list:
        items = [("kind", self.kind)]
        if self.kind == "bounded":
            items.append(("K", str(self.scale)))
            items.append(("M", str(self.clip)))
        return items


def _scaled(scale: Number, units: int) -> Number:
    if isinstance(scale, int):
        return scale * units
    prod = Fraction(scale) * units
    return int(prod) if prod.denominator == 1 else prod


def validate_level(spec: DistortionSpec, level: RationalDistortionLevel) -> None:
    """Budgets at or above the bounded ceiling make every pair acceptable
    and the fidelity constraint vacuous; reject them early."""
    if spec.kind == "bounded":
        if level.as_fraction() >= Fraction(spec.max_value):
            raise LevelOutOfRange(
                f"budget {level} is not below the distortion ceiling {spec.max_value}"
            )


def letter_distortion(spec: DistortionSpec, x: int, y: int) -> Number:
    """rho(x, y); exact, symmetric, zero iff x == y for both kinds."""
    e = abs(int(x) - int(y))
    if spec.kind == "bounded":
        return _scaled(spec.scale, min(e, spec.clip))
    return e


def unit_block_total(spec: DistortionSpec, x: Sequence[int], y: Sequence[int]) -> int:
    """Integer part of the block cost: sum |x-y| (absolute) or
    sum min(|x-y|, clip) (bounded, before the scale factor)."""
    xa = np.asarray(x, dtype=np.int64)
    ya = np.asarray(y, dtype=np.int64)
    if xa.shape != ya.shape or xa.ndim != 1 or xa.size == 0:
        raise LengthMismatch("blocks must be equal-length nonempty 1-d sequences")
    if spec.kind == "bounded":
        return int(kernels.clipped_error_sum(xa, ya, spec.clip))
    return int(kernels.abs_error_sum(xa, ya))


def block_distortion_total(spec: DistortionSpec, x: Sequence[int], y: Sequence[int]) -> Number:
    """n * rho_n(x, y), exact; the quantity budgets are compared against."""
    total = unit_block_total(spec, x, y)
    if spec.kind == "bounded":
        return _scaled(spec.scale, total)
    return total


def block_distortion(spec: DistortionSpec, x: Sequence[int], y: Sequence[int]) -> Fraction:
    """Average per-letter distortion rho_n, exact."""
    if len(x) != len(y):
        raise LengthMismatch(f"block lengths differ: {len(x)} vs {len(y)}")
    return Fraction(block_distortion_total(spec, x, y)) / len(x)


def within_budget(
    spec: DistortionSpec, level: RationalDistortionLevel, x: Sequence[int], y: Sequence[int]
) -> bool:
    """Exact test  rho_n(x, y) <= d  by cross-multiplied integers."""
    total = Fraction(block_distortion_total(spec, x, y))
    return total * level.den <= level.num * len(x)


# ---------------------------------------------------------------------------
# truncated costs


def truncated_letter_distortion(spec: DistortionSpec, k: int, i: int, j: int) -> Number:
    """The threshold-k cost on the full alphabet, by cases on {1..k}:

      both above k          -> 0
      i inside, j above     -> min over y > k of rho(i, y)
      i above, j inside     -> symmetric
      both inside           -> rho(i, j)

    Pointwise dominated by rho, and invariant under clamping both arguments
    into {1..k+1} (the two facts the two-stage argument needs).
    """
    if k < 1:
        raise ValueError("threshold k >= 1 required")
    return letter_distortion(spec, min(i, k + 1), min(j, k + 1))


class TruncatedDistortion:
    """The threshold-k cost restricted to the working alphabet {1..k+1}.

    Letters 1..k keep their identity and k+1 is the overflow class. Because
    both built-in costs are nondecreasing in |i - j|, the best true symbol
    above k against any i <= k is k+1 itself, so the whole table is rho
    evaluated after clamping -- the identity the fast kernels exploit.
    """

    def __init__(self, spec: DistortionSpec, k: int):
        if k < 1:
            raise ValueError("threshold k >= 1 required")
        self.spec = spec
        self.k = k

    def letter(self, i: int, j: int) -> Number:
        if not (1 <= i <= self.k + 1 and 1 <= j <= self.k + 1):
            raise ValueError("letters must lie in the working alphabet")
        return letter_distortion(self.spec, i, j)

    def block_total(self, x: Sequence[int], y: Sequence[int]) -> Number:
        return block_distortion_total(self.spec, x, y)

    def within_budget(
        self, level: RationalDistortionLevel, x: Sequence[int], y: Sequence[int]
    ) -> bool:
        total = Fraction(self.block_total(x, y))
        return total * level.den <= level.num * len(x)


def truncated_distortion(spec: DistortionSpec, k: int) -> TruncatedDistortion:
    return TruncatedDistortion(spec, k)


def overflow_cost_consistency(spec: DistortionSpec, k: int, horizon: int = 256) -> Number:
    """max over i <= k of | min_{y>k} rho(i,y) - rho~(i, k+1) |, the min taken
    exhaustively over a horizon of candidates above k. Zero certifies that the
    clamped table realizes the true best overflow cost."""
    td = TruncatedDistortion(spec, k)
    worst: Number = 0
    for i in range(1, k + 1):
        best = min(letter_distortion(spec, i, y) for y in range(k + 1, k + 2 + horizon))
        worst = max(worst, abs(Fraction(best) - Fraction(td.letter(i, k + 1))))
    return int(worst) if isinstance(worst, Fraction) and worst.denominator == 1 else worst


# ---------------------------------------------------------------------------
# consistency certificates


def consistency_epsilon(spec: DistortionSpec, level: Number) -> Number:
    """An exact radius eps such that rho(i, j) >= level whenever |i - j| >= eps.

    absolute: eps = level. bounded: eps = level / scale, defined only for
    level <= scale * clip (beyond the ceiling no radius can work). The
    certificate is verified over a sample window before returning.
    """
    lv = Fraction(level)
    if lv <= 0:
        raise ValueError("level must be positive")
    if spec.kind == "bounded":
        ceiling = Fraction(spec.max_value)
        if lv > ceiling:
            raise LevelOutOfRange(f"level {level} exceeds the ceiling {ceiling}")
        eps = lv / Fraction(spec.scale)
    else:
        eps = lv
    _verify_epsilon(spec, lv, eps)
    return int(eps) if eps.denominator == 1 else eps


def _verify_epsilon(spec: DistortionSpec, level: Fraction, eps: Fraction, window: int = 64) -> None:
    bound = int(2 * eps) + 2
    for i in range(1, window + 1):
        for j in range(max(1, i - bound), i + bound + 1):
            if abs(i - j) >= eps and Fraction(letter_distortion(spec, i, j)) < level:
                raise AssertionError(
                    f"consistency certificate failed at ({i},{j}) for level {level}"
                )
