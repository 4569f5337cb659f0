"""Domain types and shared combinatorics for D/M/(K,N)/L systems."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.special import gammaln

UNBOUNDED = math.inf

MASS_TOL = 1e-6
DEFAULT_STEPS_PER_TAU = 400


class ConfigError(ValueError):
    """Base class for invalid system configurations."""

    code = "invalid_config"


class CodeRateError(ConfigError):
    code = "k_exceeds_n"


class LengthMismatchError(ConfigError):
    code = "length_mismatch"


class NonPositiveError(ConfigError):
    code = "non_positive"


class ErasureRangeError(ConfigError):
    code = "erasure_out_of_range"


class QueueCapError(ConfigError):
    code = "bad_queue_cap"


@dataclass(frozen=True)
class SystemConfig:
    """A D/M/(K,N)/L instance.

    ``queue_cap`` is a positive integer or :data:`UNBOUNDED`.
    """

    n_paths: int
    k_data: int
    queue_cap: float
    inter_arrival: float
    service_rates: tuple[float, ...]
    erasure_probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "service_rates", tuple(float(x) for x in self.service_rates))
        object.__setattr__(self, "erasure_probs", tuple(float(x) for x in self.erasure_probs))
        validate_config(self)

    @classmethod
    def build(cls, k: int, n: int, L, tau: float, mu=1.0, eps=0.0) -> "SystemConfig":
        """Convenience constructor accepting scalar or per-path ``mu``/``eps``."""
        mu_vec = [mu] * n if np.isscalar(mu) else list(mu)
        eps_vec = [eps] * n if np.isscalar(eps) else list(eps)
        return cls(n, k, parse_queue_cap(L), tau, tuple(mu_vec), tuple(eps_vec))

    @property
    def finite(self) -> bool:
        return not math.isinf(self.queue_cap)

    @property
    def L(self) -> int:
        if not self.finite:
            raise ValueError("queue is unbounded")
        return int(self.queue_cap)

    def with_rates(self, rates: Sequence[float]) -> "SystemConfig":
        return SystemConfig(self.n_paths, self.k_data, self.queue_cap, self.inter_arrival,
                            tuple(rates), self.erasure_probs)

    def label(self) -> str:
        cap = "inf" if not self.finite else str(self.L)
        return f"({self.k_data},{self.n_paths})/L={cap}/tau={self.inter_arrival:g}"


def parse_queue_cap(L) -> float:
    if isinstance(L, str):
        if L.strip().lower() in ("inf", "infinity", "unbounded"):
            return UNBOUNDED
        L = int(L)
    if L is None or (isinstance(L, float) and math.isinf(L)):
        return UNBOUNDED
    return L


def validate_config(cfg: SystemConfig) -> SystemConfig:
    if cfg.n_paths < 1 or cfg.k_data < 1:
        raise NonPositiveError(f"N and K must be positive, got N={cfg.n_paths}, K={cfg.k_data}")
    if cfg.k_data > cfg.n_paths:
        raise CodeRateError(f"K={cfg.k_data} exceeds N={cfg.n_paths}")
    if len(cfg.service_rates) != cfg.n_paths or len(cfg.erasure_probs) != cfg.n_paths:
        raise LengthMismatchError(
            f"expected {cfg.n_paths} rates and erasure probabilities, got "
            f"{len(cfg.service_rates)} and {len(cfg.erasure_probs)}")
    if not cfg.inter_arrival > 0:
        raise NonPositiveError(f"inter-arrival period must be positive, got {cfg.inter_arrival}")
    if any(not mu > 0 for mu in cfg.service_rates):
        raise NonPositiveError(f"service rates must be positive, got {cfg.service_rates}")
    if any(not 0.0 <= e < 1.0 for e in cfg.erasure_probs):
        raise ErasureRangeError(f"erasure probabilities must lie in [0,1), got {cfg.erasure_probs}")
    cap = cfg.queue_cap
    if not math.isinf(cap) and (cap != int(cap) or cap < 1):
        raise QueueCapError(f"queue cap must be a positive integer or unbounded, got {cap}")
    return cfg


def poisson_pmf(rate, n, t):
    """``(rate*t)**n * exp(-rate*t) / n!``, evaluated in log space.

    ``n`` and ``t`` broadcast; ``t == 0`` gives 1 for ``n == 0`` and 0 otherwise.
    """
    n = np.asarray(n, dtype=float)
    t = np.asarray(t, dtype=float)
    x = rate * t
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(n > 0, n * np.log(np.where(x > 0, x, 1.0)), 0.0) - x - gammaln(n + 1)
        out = np.exp(logp)
    out = np.where((x == 0) & (n > 0), 0.0, out)
    return out if out.ndim else float(out)


def truncated_departures(rate: float, tau: float, present: int) -> np.ndarray:
    """Law of the number of departures in ``tau`` when ``present`` packets are queued.

    Index ``d`` holds P(d departures); the last entry absorbs the tail mass.
    """
    probs = np.array([poisson_pmf(rate, d, tau) for d in range(present)] + [0.0])
    probs[present] = max(0.0, 1.0 - probs[:present].sum())
    return probs


@dataclass(frozen=True)
class SubsetFamily:
    """All size-``k_size`` subsets of ``range(n_universe)`` in lexicographic order."""

    k_size: int
    n_universe: int

    def __iter__(self) -> Iterator[tuple[int, ...]]:
        return itertools.combinations(range(self.n_universe), self.k_size)

    def __len__(self) -> int:
        return math.comb(self.n_universe, self.k_size)


def subsets(n: int, k: int) -> SubsetFamily:
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    return SubsetFamily(k, n)


@dataclass(frozen=True, eq=False)
class GridDistribution:
    """Sub-probability law on a uniform grid ``0, h, 2h, ..., t_max``.

    ``pdf`` holds cell-midpoint samples (one per cell) and ``cdf`` holds node
    values (one per node). ``total_mass`` is the limit of the CDF; anything
    short of 1 is mass at infinity.
    """

    grid_step: float
    t_max: float
    pdf: np.ndarray
    cdf: np.ndarray
    total_mass: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.cdf) != len(self.pdf) + 1:
            raise ValueError("cdf must have one more sample than pdf")

    @classmethod
    def from_half_grid(cls, h: float, pdf_half: np.ndarray, cdf_half: np.ndarray,
                       total_mass: float | None = None, **meta) -> "GridDistribution":
        """Split samples taken every ``h/2`` into midpoint pdf and node cdf."""
        pdf_half = np.asarray(pdf_half, dtype=float)
        cdf_half = np.asarray(cdf_half, dtype=float)
        cdf = np.maximum.accumulate(cdf_half[::2])
        mass = float(cdf[-1]) if total_mass is None else float(total_mass)
        n_cells = len(cdf) - 1
        return cls(h, n_cells * h, pdf_half[1::2].copy(), cdf, mass, dict(meta))

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(len(self.cdf)) * self.grid_step

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(len(self.pdf)) + 0.5) * self.grid_step

    def integral(self) -> float:
        """Midpoint-rule integral of the pdf."""
        return float(self.pdf.sum() * self.grid_step)

    def cdf_at(self, t) -> np.ndarray:
        """CDF by linear interpolation; beyond ``t_max`` the CDF equals ``total_mass``."""
        t = np.asarray(t, dtype=float)
        out = np.interp(t, self.nodes, self.cdf, left=0.0, right=self.total_mass)
        return np.where(t > self.t_max, self.total_mass, out)

    def check(self, tol: float = MASS_TOL) -> None:
        if np.any(np.diff(self.cdf) < -tol):
            raise AssertionError("cdf is not monotone")
        if abs(self.cdf[-1] - self.total_mass) > tol:
            raise AssertionError(f"cdf ends at {self.cdf[-1]}, mass is {self.total_mass}")
        if self.total_mass > 1 + tol:
            raise AssertionError(f"mass {self.total_mass} exceeds 1")


@dataclass(frozen=True)
class QueueStateLaw:
    """Pre-arrival occupancy law.

    Finite queues keep the full vector. Unbounded queues keep the geometric
    ratio ``sigma`` and a vector truncated where the tail falls under 1e-12.
    """

    probs: np.ndarray
    sigma: float | None = None

    @classmethod
    def geometric(cls, sigma: float, tail: float = 1e-12) -> "QueueStateLaw":
        n = 1 if sigma <= 0 else int(math.ceil(math.log(tail) / math.log(sigma)))
        q = np.arange(max(n, 1))
        return cls((1 - sigma) * sigma ** q, sigma)

    def mean(self) -> float:
        if self.sigma is not None:
            return self.sigma / (1 - self.sigma)
        return float(np.arange(len(self.probs)) @ self.probs)
