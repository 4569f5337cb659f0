"""Single-path analysis: pre-arrival chain, drops and delivery-latency laws.

Per-path laws are computed on a half-step grid (spacing ``h/2`` with
``h = tau / steps``) so that node CDF values and midpoint pdf values come out
of one pass. Piecewise branches use half-open intervals ``(m*tau, (m+1)*tau]``;
the sample at a breakpoint is the left limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammainc

from .core import (DEFAULT_STEPS_PER_TAU, GridDistribution, QueueStateLaw, SystemConfig,
                   poisson_pmf, truncated_departures)


class ConvergenceError(RuntimeError):
    pass


class UnstableError(ValueError):
    """Raised for an unbounded queue with ``mu * tau <= 1``."""

    code = "unstable"


def transition_matrix(mu: float, tau: float, L: int) -> np.ndarray:
    """Transition matrix of the occupancy seen by consecutive arrivals."""
    M = np.zeros((L + 1, L + 1))
    for s in range(L + 1):
        c = min(1 + s, L)
        probs = truncated_departures(mu, tau, c)
        for d, p in enumerate(probs):
            M[s, c - d] += p
    return M


def steady_state(M: np.ndarray, tol: float = 1e-12) -> QueueStateLaw:
    n = M.shape[0]
    A = np.vstack([(M.T - np.eye(n)), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    if np.max(np.abs(pi @ M - pi)) > tol:
        # polish with power iteration; lstsq on a near-singular system can be off in the last digits
        for _ in range(10_000):
            nxt = pi @ M
            if np.max(np.abs(nxt - pi)) < tol:
                break
            pi = nxt
        else:
            raise ConvergenceError("stationary law did not converge")
        pi = nxt / nxt.sum()
    return QueueStateLaw(pi)


def _next_ahead(q: int, d: int, levels: int) -> int:
    # one more packet queues behind ours; if that fills the buffer, the oldest goes
    return q - d if q < levels - 1 else q - max(d, 1)


def drop_prob(mu: float, tau: float, L: int, q: int) -> float:
    """Probability that a packet finding ``q`` packets ahead is eventually dropped."""
    if not 0 <= q <= L - 1:
        raise ValueError(f"q={q} outside [0, {L - 1}]")
    return _drop_table(float(mu), float(tau))(L, q)


@lru_cache(maxsize=256)
def _drop_table(mu: float, tau: float):
    dep = [poisson_pmf(mu, d, tau) for d in range(64)]

    @lru_cache(maxsize=None)
    def rec(levels: int, q: int) -> float:
        if q < 0 or levels == 0:
            return 1.0
        return sum(dep[d] * rec(levels - 1, _next_ahead(q, d, levels)) for d in range(q + 1))

    return rec


def conditional_half(mu: float, eps: float, tau: float, L: int, q: int,
                     steps: int = DEFAULT_STEPS_PER_TAU):
    """Conditional delivery pdf/cdf given ``q`` ahead, sampled every ``tau/(2*steps)``.

    Arrays cover ``[0, (L+1)*tau]``; both carry the ``(1 - eps)`` factor once.
    """
    tables = _conditional_tables(float(mu), float(eps), float(tau), int(steps))
    pdf, cdf = tables(L, q)
    P = 2 * steps
    pad = P
    return (np.concatenate([pdf, np.zeros(pad)]),
            np.concatenate([cdf, np.full(pad, cdf[-1])]))


@lru_cache(maxsize=64)
def _conditional_tables(mu: float, eps: float, tau: float, steps: int):
    P = 2 * steps
    u = np.arange(P + 1) * (tau / P)
    dep = [poisson_pmf(mu, d, tau) for d in range(64)]

    @lru_cache(maxsize=None)
    def rec(levels: int, q: int):
        n = levels * P + 1
        pdf = np.zeros(n)
        cdf = np.zeros(n)
        pdf[:P + 1] = (1 - eps) * mu * poisson_pmf(mu, q, u)
        cdf[:P + 1] = (1 - eps) * gammainc(q + 1, mu * u)
        cdf[P + 1:] = cdf[P]
        for d in range(q + 1):
            q_next = _next_ahead(q, d, levels)
            if q_next < 0 or levels == 1:
                continue
            child_pdf, child_cdf = rec(levels - 1, q_next)
            pdf[P + 1:] += dep[d] * child_pdf[1:]
            cdf[P + 1:] += dep[d] * child_cdf[1:]
        pdf.flags.writeable = False
        cdf.flags.writeable = False
        return pdf, cdf

    return rec


def path_latency_conditional(mu: float, eps: float, tau: float, L: int, q: int,
                             steps: int = DEFAULT_STEPS_PER_TAU) -> GridDistribution:
    if not 0 <= q <= L - 1:
        raise ValueError(f"q={q} outside [0, {L - 1}]")
    pdf, cdf = conditional_half(mu, eps, tau, L, q, steps)
    mass = (1 - eps) * (1 - drop_prob(mu, tau, L, q))
    return GridDistribution.from_half_grid(tau / steps, pdf, cdf, mass, q=q)


@dataclass(frozen=True, eq=False)
class PathAnalysis:
    path_index: int
    steady_state: QueueStateLaw
    drop_prob_by_state: np.ndarray
    drop_prob: float
    latency_by_state: tuple
    latency: GridDistribution


def unconditional_half(cfg: SystemConfig, j: int, steps: int = DEFAULT_STEPS_PER_TAU):
    """(pdf_half, cdf_half, drop) of path ``j``, mixed over the stationary state."""
    mu, eps, tau, L = cfg.service_rates[j], cfg.erasure_probs[j], cfg.inter_arrival, cfg.L
    pi = steady_state(transition_matrix(mu, tau, L)).probs
    weights = np.zeros(L)
    for s, p in enumerate(pi):
        weights[min(s, L - 1)] += p
    pdf = 0.0
    cdf = 0.0
    drop = 0.0
    for q, w in enumerate(weights):
        cp, cc = conditional_half(mu, eps, tau, L, q, steps)
        pdf = pdf + w * cp
        cdf = cdf + w * cc
        drop += w * drop_prob(mu, tau, L, q)
    return pdf, cdf, drop


def path_latency_unconditional(cfg: SystemConfig, j: int,
                               steps: int = DEFAULT_STEPS_PER_TAU) -> tuple[GridDistribution, float]:
    if not cfg.finite:
        raise ValueError("use path_latency_infinite for unbounded queues")
    pdf, cdf, drop = unconditional_half(cfg, j, steps)
    mass = (1 - cfg.erasure_probs[j]) * (1 - drop)
    return GridDistribution.from_half_grid(cfg.inter_arrival / steps, pdf, cdf, mass, path=j), drop


def analyze_path(cfg: SystemConfig, j: int, steps: int = DEFAULT_STEPS_PER_TAU) -> PathAnalysis:
    mu, eps, tau, L = cfg.service_rates[j], cfg.erasure_probs[j], cfg.inter_arrival, cfg.L
    law = steady_state(transition_matrix(mu, tau, L))
    drops = np.array([drop_prob(mu, tau, L, q) for q in range(L)])
    conds = tuple(path_latency_conditional(mu, eps, tau, L, q, steps) for q in range(L))
    latency, drop = path_latency_unconditional(cfg, j, steps)
    return PathAnalysis(j, law, drops, drop, conds, latency)


def sigma_root(mu: float, tau: float, doubled: bool = False) -> float:
    """Root in (0, 1) of ``x = exp(-c (1 - x))`` with ``c = mu*tau``.

    ``doubled=True`` uses ``c = 2*mu*tau`` instead, for comparison only.
    """
    c = (2.0 if doubled else 1.0) * mu * tau
    if c <= 1.0:
        raise UnstableError(f"no root in (0,1): mu*tau={mu * tau:g} gives load >= 1")

    def f(x):
        return x - math.exp(-c * (1.0 - x))

    # f < 0 at 0; f > 0 just below 1 whenever c > 1
    hi = 1.0 - min(0.5, (c - 1.0) / (c * c))
    while f(hi) <= 0:
        hi = 1.0 - (1.0 - hi) / 2
    x = brentq(f, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return x


def geometric_state_law(mu: float, tau: float, doubled: bool = False) -> QueueStateLaw:
    return QueueStateLaw.geometric(sigma_root(mu, tau, doubled))


def infinite_horizon(rates, eps, tail: float = 1e-8, tau: float = 1.0) -> float:
    """Smallest multiple of ``tau`` beyond which every path's residual mass is below ``tail``."""
    t = max(math.log((1 - e) / tail) / r for r, e in zip(rates, eps) if e < 1)
    return tau * max(1, math.ceil(t / tau))


def path_latency_infinite(mu: float, eps: float, tau: float,
                          steps: int = DEFAULT_STEPS_PER_TAU,
                          t_max: float | None = None) -> GridDistribution:
    """Exponential sub-distribution with rate ``mu*(1-sigma)`` and mass ``1-eps``."""
    sigma = sigma_root(mu, tau)
    rate = mu * (1 - sigma)
    if t_max is None:
        t_max = infinite_horizon([rate], [eps], tau=tau)
    h = tau / steps
    n_cells = int(round(t_max / h))
    t = np.arange(2 * n_cells + 1) * (h / 2)
    pdf = (1 - eps) * rate * np.exp(-rate * t)
    cdf = (1 - eps) * -np.expm1(-rate * t)
    return GridDistribution.from_half_grid(h, pdf, cdf, 1 - eps, sigma=sigma, rate=rate)
