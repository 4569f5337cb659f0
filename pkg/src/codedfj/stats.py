"""Empirical CDFs, KS distances, percentiles and reliability summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import GridDistribution


@dataclass(frozen=True, eq=False)
class EmpiricalCDF:
    """Right-continuous step CDF; infinite samples count only toward ``n_total``."""

    finite_sorted: np.ndarray
    n_total: int

    @property
    def total_mass(self) -> float:
        return len(self.finite_sorted) / self.n_total

    def __call__(self, t):
        return np.searchsorted(self.finite_sorted, t, side="right") / self.n_total

    def left_limit(self, t):
        return np.searchsorted(self.finite_sorted, t, side="left") / self.n_total


def empirical_cdf(samples) -> EmpiricalCDF:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empirical_cdf needs at least one sample")
    finite = np.sort(x[np.isfinite(x)])
    return EmpiricalCDF(finite, x.size)


def _evaluate(law, t, left=False):
    if isinstance(law, EmpiricalCDF):
        return law.left_limit(t) if left else law(t)
    if isinstance(law, GridDistribution):
        return law.cdf_at(t)
    raise TypeError(f"unsupported CDF type {type(law).__name__}")


def _breakpoints(law):
    if isinstance(law, EmpiricalCDF):
        return np.unique(law.finite_sorted)
    return law.nodes


def ks_distance(a, b) -> float:
    """Sup-distance between two (possibly improper) CDFs, limit masses included."""
    pts = np.union1d(_breakpoints(a), _breakpoints(b))
    d = np.max(np.abs(_evaluate(a, pts) - _evaluate(b, pts)), initial=0.0)
    if isinstance(a, EmpiricalCDF) or isinstance(b, EmpiricalCDF):
        # step functions also jump, so compare left limits at the jump points
        d = max(d, float(np.max(np.abs(_evaluate(a, pts, True) - _evaluate(b, pts, True)), initial=0.0)))
    return float(max(d, abs(a.total_mass - b.total_mass)))


def percentile(law, level: float) -> float:
    """Smallest t with CDF(t) >= level, or +inf when the law never gets there."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0,1), got {level}")
    if isinstance(law, EmpiricalCDF):
        rank = math.ceil(level * law.n_total - 1e-9)
        if rank > len(law.finite_sorted):
            return math.inf
        return float(law.finite_sorted[max(rank, 1) - 1])
    cdf = law.cdf
    if cdf[-1] < level:
        return math.inf
    i = int(np.searchsorted(cdf, level, side="left"))
    if i == 0:
        return 0.0
    lo, hi = cdf[i - 1], cdf[i]
    frac = (level - lo) / (hi - lo) if hi > lo else 1.0
    return float((i - 1 + frac) * law.grid_step)


@dataclass
class MetricSummary:
    success_prob: float
    latency_cdf: object
    paoi_cdf: object | None
    percentiles: dict = field(default_factory=dict)
    latency_percentiles: dict = field(default_factory=dict)


def summarize(success_prob: float, latency, paoi=None, levels=(0.95, 0.99)) -> MetricSummary:
    pct = {lv: percentile(paoi, lv) for lv in levels} if paoi is not None else {}
    lat = {lv: percentile(latency, lv) for lv in levels}
    return MetricSummary(success_prob, latency, paoi, pct, lat)
