"""Exact fixed-point arithmetic for protocol-visible values.

All currency and bandwidth quantities are integers scaled by 2**-20.
Keeping every protocol-visible value on this grid makes byte-equality of
outcomes across providers meaningful; floats never enter the protocol.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

FRAC_BITS = 20
SCALE = 1 << FRAC_BITS

FIELD_BITS = 64
FIELD_MAX = (1 << FIELD_BITS) - 1


@dataclass(frozen=True, slots=True)
class FP:
    """A number raw * 2**-20. Supports exact add/sub and floor-rounded mul."""

    raw: int

    @classmethod
    def from_int(cls, n: int) -> "FP":
        return cls(n * SCALE)

    @classmethod
    def from_float(cls, x: float) -> "FP":
        return cls(round(x * SCALE))

    @classmethod
    def parse(cls, s: str) -> "FP":
        return cls(round(Fraction(s) * SCALE))

    def __add__(self, other: "FP") -> "FP":
        return FP(self.raw + other.raw)

    def __sub__(self, other: "FP") -> "FP":
        return FP(self.raw - other.raw)

    def __neg__(self) -> "FP":
        return FP(-self.raw)

    def __mul__(self, other: "FP") -> "FP":
        # floor division rounds toward -inf for negatives: deterministic.
        return FP((self.raw * other.raw) >> FRAC_BITS)

    def mul_ceil(self, other: "FP") -> "FP":
        return FP(-((-(self.raw * other.raw)) >> FRAC_BITS))

    def __lt__(self, other: "FP") -> bool:
        return self.raw < other.raw

    def __le__(self, other: "FP") -> bool:
        return self.raw <= other.raw

    def __gt__(self, other: "FP") -> bool:
        return self.raw > other.raw

    def __ge__(self, other: "FP") -> bool:
        return self.raw >= other.raw

    def __bool__(self) -> bool:
        return self.raw != 0

    def to_float(self) -> float:
        return self.raw / SCALE

    def decimal(self) -> str:
        """Exact decimal string (2**-20 has a finite decimal expansion)."""
        raw = self.raw
        sign = "-" if raw < 0 else ""
        raw = abs(raw)
        whole, frac = divmod(raw, SCALE)
        if frac == 0:
            return f"{sign}{whole}"
        digits = str(frac * 5**FRAC_BITS).rjust(FRAC_BITS, "0").rstrip("0")
        return f"{sign}{whole}.{digits}"

    def __repr__(self) -> str:
        return f"FP({self.decimal()})"


ZERO = FP(0)
ONE = FP(SCALE)


def fp(x) -> FP:
    """Convenience constructor from int, float, str or FP."""
    if isinstance(x, FP):
        return x
    if isinstance(x, int):
        return FP.from_int(x)
    if isinstance(x, float):
        return FP.from_float(x)
    if isinstance(x, str):
        return FP.parse(x)
    raise TypeError(f"cannot convert {type(x).__name__} to FP")


def fp_sum(values) -> FP:
    total = 0
    for v in values:
        total += v.raw
    return FP(total)
