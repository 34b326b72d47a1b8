"""Monte Carlo estimate container with an associative merge.

Ensemble computations reduce per-chunk estimates in a fixed order, so results
are independent of how work is distributed across processes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class MCEstimate:
    """Running mean / scatter of (possibly complex) Monte Carlo samples.

    `m2` is the accumulated sum of |x_i - mean|^2 (Chan/Welford form), which
    makes `merge` exact pooling: merging two disjoint estimates equals the
    estimate built from the union of their samples.
    """
    mean: complex
    m2: float
    count: int

    @staticmethod
    def from_samples(samples) -> "MCEstimate":
        arr = np.asarray(samples)
        n = arr.size
        if n == 0:
            return MCEstimate(0.0 + 0.0j, 0.0, 0)
        mean = complex(arr.mean())
        m2 = float(np.abs(arr - mean).__pow__(2).sum())
        return MCEstimate(mean, m2, n)

    def merge(self, other: "MCEstimate") -> "MCEstimate":
        if self.count == 0:
            return other
        if other.count == 0:
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + abs(delta) ** 2 * self.count * other.count / n
        return MCEstimate(mean, m2, n)

    @property
    def variance(self) -> float:
        """Unbiased scatter E|x - mean|^2 (sum over real and imaginary parts)."""
        if self.count < 2:
            return math.inf
        return self.m2 / (self.count - 1)

    @property
    def std_err(self) -> float:
        if self.count < 2:
            return math.inf
        return math.sqrt(self.variance / self.count)

    @property
    def ci(self) -> float:
        """95% half-width for |mean - truth| (1.96 standard errors)."""
        se = self.std_err
        return math.inf if math.isinf(se) else 1.96 * se
