"""Per-node drifting clocks with exact rational arithmetic.

``local = offset + rate * t``.  Conversions round to the nearest tick with
ties to even (Python's ``round`` on ``Fraction``), so a real -> local -> real
round trip is off by at most one tick for any rate near 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction


@dataclass(frozen=True)
class Clock:
    node: int
    rate: Fraction = Fraction(1)
    offset: int = 0

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("clock rate must be positive")

    def local_of(self, t: int) -> int:
        if self.rate == 1:
            return self.offset + t
        return round(self.offset + self.rate * t)

    def real_of(self, tau: int) -> int:
        if self.rate == 1:
            return tau - self.offset
        return round((tau - self.offset) / self.rate)

    def first_real_reaching(self, tau: int) -> int:
        """Smallest integer real time whose local reading is >= tau."""
        if self.rate == 1:
            return tau - self.offset
        t = math.floor((tau - self.offset) / self.rate) - 1
        while self.local_of(t) >= tau:
            t -= 1
        while self.local_of(t) < tau:
            t += 1
        return t


def local_of(clock: Clock, t: int) -> int:
    return clock.local_of(t)


def real_of(clock: Clock, tau: int) -> int:
    return clock.real_of(tau)
