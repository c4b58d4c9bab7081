from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import BinningMismatchError, UsageError


@dataclass
class Histogram1D:
    """Fixed-binning 1D histogram.

    ``counts`` has ``n_bins + 2`` slots: underflow, the regular bins, then
    overflow.
    """

    name: str
    n_bins: int
    lo: float
    hi: float
    counts: list = field(default=None)

    def __post_init__(self):
        if self.n_bins < 1:
            raise UsageError(f"histogram {self.name!r} needs at least one bin")
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise UsageError(f"histogram {self.name!r} needs finite lo < hi")
        if self.counts is None:
            self.counts = [0.0] * (self.n_bins + 2)
        self.counts = [float(c) for c in self.counts]
        if len(self.counts) != self.n_bins + 2:
            raise UsageError(
                f"histogram {self.name!r}: expected {self.n_bins + 2} counts, "
                f"got {len(self.counts)}"
            )

    def find_bin(self, x: float) -> int:
        if x < self.lo:
            return 0
        if x >= self.hi:
            return self.n_bins + 1
        return 1 + min(int((x - self.lo) / (self.hi - self.lo) * self.n_bins), self.n_bins - 1)

    def fill(self, x: float, weight: float = 1.0) -> None:
        if math.isnan(x):
            return
        self.counts[self.find_bin(x)] += weight

    def same_binning(self, other: "Histogram1D") -> bool:
        return (self.n_bins, self.lo, self.hi) == (other.n_bins, other.lo, other.hi)

    def check_compatible(self, other: "Histogram1D") -> None:
        if self.name != other.name or not self.same_binning(other):
            raise BinningMismatchError(
                f"cannot add histogram {other.name!r} ({other.n_bins} bins "
                f"[{other.lo:g}, {other.hi:g})) to {self.name!r} ({self.n_bins} bins "
                f"[{self.lo:g}, {self.hi:g}))"
            )

    @property
    def entries(self) -> float:
        return sum(self.counts)
