"""Streaming paired statistics and the paired Student t-test."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

ALTERNATIVES = ("greater", "two-sided")


@dataclass
class PairedAccumulator:
    """Welford accumulator over differences ``a_j - b_j``.

    Mergeable (Chan et al. pairwise update), so concurrent scorers can keep
    private accumulators and combine them afterwards.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def push(self, a: float, b: float = 0.0) -> None:
        d = float(a) - float(b)
        self.count += 1
        delta = d - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (d - self.mean)

    def extend(self, a, b=None) -> "PairedAccumulator":
        a = np.asarray(a, dtype=np.float64)
        diffs = a if b is None else a - np.asarray(b, dtype=np.float64)
        for d in diffs:
            self.push(d)
        return self

    @classmethod
    def from_pairs(cls, a, b=None) -> "PairedAccumulator":
        return cls().extend(a, b)

    def merge(self, other: "PairedAccumulator") -> "PairedAccumulator":
        n = self.count + other.count
        if n == 0:
            return PairedAccumulator()
        if self.count == 0:
            return PairedAccumulator(other.count, other.mean, other.m2)
        if other.count == 0:
            return PairedAccumulator(self.count, self.mean, self.m2)
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return PairedAccumulator(n, mean, m2)

    @property
    def variance(self) -> float:
        if self.count < 2:
            return math.nan
        return max(self.m2, 0.0) / (self.count - 1)


def student_t_sf(x: float, df: int) -> float:
    """P(T > x) for Student's t with ``df`` degrees of freedom."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if math.isnan(x):
        return math.nan
    if math.isinf(x):
        return 0.0 if x > 0 else 1.0
    return float(kernels.scalar_t_sf(float(x), float(df)))


def paired_ttest_pvalue(diffs: PairedAccumulator, alternative: str = "greater") -> float:
    """p-value of the paired t-test on accumulated differences.

    ``alternative="greater"`` tests H1: mean difference > 0. With zero
    sample variance the result is 1 when the mean is <= 0 (0 for the
    two-sided test only when the mean is exactly 0) and 0 otherwise.
    """
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}")
    if diffs.count < 2:
        raise ValueError("paired t-test needs at least two pairs")
    p = kernels.paired_pvalues(np.array([float(diffs.count)]), np.array([diffs.mean]),
                               np.array([max(diffs.m2, 0.0)]), alternative == "two-sided")
    return float(p[0])
