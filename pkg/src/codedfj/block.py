"""Block-level latency, decoding probability and peak-AoI laws.

The per-path laws already carry their erasure factor, so combining them into a
block law multiplies nothing by ``(1 - eps)`` a second time.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc

from .core import (DEFAULT_STEPS_PER_TAU, GridDistribution, SystemConfig, poisson_pmf, subsets,
                   truncated_departures)
from .path import (conditional_half, infinite_horizon, sigma_root, steady_state,
                   transition_matrix, unconditional_half)

PAOI_TAIL = 1e-9
PAOI_MAX_SAMPLES = 4_000_000


class StateSpaceTooLarge(RuntimeError):
    code = "analytic_infeasible"


class InstanceTooLarge(ValueError):
    code = "instance_too_large"


@dataclass(frozen=True, eq=False)
class BlockAnalysis:
    latency: GridDistribution
    success_prob: float
    paoi: GridDistribution | None = None


def combine_paths(pdfs, cdfs, k: int):
    """Block pdf/cdf from independent per-path laws sampled on a common grid.

    The pdf is the density of the K-th delivery: K-1 paths done, one path
    delivering now, the rest not yet. The cdf sums over every delivered set of
    size at least K.
    """
    n = len(pdfs)
    F = np.asarray(cdfs)
    f = np.asarray(pdfs)
    G = 1.0 - F
    pdf = np.zeros(F.shape[1])
    for done in subsets(n, k - 1):
        head = np.prod(F[list(done)], axis=0) if done else 1.0
        rest = [m for m in range(n) if m not in done]
        for ell in rest:
            others = [m for m in rest if m != ell]
            tail = np.prod(G[others], axis=0) if others else 1.0
            pdf += head * f[ell] * tail
    cdf = np.zeros(F.shape[1])
    for size in range(k, n + 1):
        for done in subsets(n, size):
            rest = [m for m in range(n) if m not in done]
            term = np.prod(F[list(done)], axis=0)
            if rest:
                term = term * np.prod(G[rest], axis=0)
            cdf += term
    return pdf, cdf


def at_least_k(probs, k: int) -> float:
    """P(at least ``k`` successes) for independent trials with ``probs``."""
    dist = np.zeros(len(probs) + 1)
    dist[0] = 1.0
    for p in probs:
        dist[1:] = dist[1:] * (1 - p) + dist[:-1] * p
        dist[0] *= 1 - p
    return float(dist[k:].sum())


def block_latency_conditional(cfg: SystemConfig, q_vector, steps: int = DEFAULT_STEPS_PER_TAU) -> GridDistribution:
    L = cfg.L
    if len(q_vector) != cfg.n_paths:
        raise ValueError("need one state per path")
    if any(not 0 <= q <= L - 1 for q in q_vector):
        raise ValueError(f"states must lie in [0, {L - 1}], got {q_vector}")
    laws = [conditional_half(cfg.service_rates[j], cfg.erasure_probs[j], cfg.inter_arrival, L, q, steps)
            for j, q in enumerate(q_vector)]
    pdf, cdf = combine_paths([p for p, _ in laws], [c for _, c in laws], cfg.k_data)
    return GridDistribution.from_half_grid(cfg.inter_arrival / steps, pdf, cdf, q_vector=tuple(q_vector))


def success_prob_infinite(cfg: SystemConfig) -> float:
    """Decoding probability with unbounded queues: only erasures lose packets."""
    n, k = cfg.n_paths, cfg.k_data
    eps = cfg.erasure_probs
    total = 0.0
    for size in range(k, n + 1):
        for ok in subsets(n, size):
            term = 1.0
            for j in range(n):
                term *= (1 - eps[j]) if j in ok else eps[j]
            total += term
    return total


def _finite_mixture(cfg: SystemConfig, steps: int, state_cap: int):
    L, n = cfg.L, cfg.n_paths
    if L ** n > state_cap:
        raise StateSpaceTooLarge(f"{L}^{n} joint states exceed cap {state_cap}")
    weights = []
    for j in range(n):
        pi = steady_state(transition_matrix(cfg.service_rates[j], cfg.inter_arrival, L)).probs
        w = np.zeros(L)
        for s, p in enumerate(pi):
            w[min(s, L - 1)] += p
        weights.append(w)
    pdf = cdf = 0.0
    for qs in itertools.product(range(L), repeat=n):
        w = math.prod(weights[j][q] for j, q in enumerate(qs))
        if w == 0.0:
            continue
        laws = [conditional_half(cfg.service_rates[j], cfg.erasure_probs[j], cfg.inter_arrival, L, q, steps)
                for j, q in enumerate(qs)]
        p, c = combine_paths([x for x, _ in laws], [y for _, y in laws], cfg.k_data)
        pdf = pdf + w * p
        cdf = cdf + w * c
    return pdf, cdf


def block_latency(cfg: SystemConfig, steps: int = DEFAULT_STEPS_PER_TAU, method: str = "factorized",
                  state_cap: int = 50_000, with_paoi: bool = True) -> BlockAnalysis:
    """Unconditional block latency law and decoding probability.

    For finite queues the joint state law is a product over paths and the
    block law is multilinear in the per-path laws, so mixing over the product
    state space (``method="mixture"``) equals combining the per-path
    unconditional laws (``method="factorized"``). The second is the default.
    """
    h = cfg.inter_arrival / steps
    if not cfg.finite:
        return _block_latency_infinite(cfg, steps, with_paoi)
    if method == "mixture":
        pdf, cdf = _finite_mixture(cfg, steps, state_cap)
    elif method == "factorized":
        laws = [unconditional_half(cfg, j, steps) for j in range(cfg.n_paths)]
        pdf, cdf = combine_paths([x[0] for x in laws], [x[1] for x in laws], cfg.k_data)
    else:
        raise ValueError(f"unknown method {method!r}")
    latency = GridDistribution.from_half_grid(h, pdf, cdf)
    ps = latency.total_mass
    if cfg.L == 1:
        # every packet is gone by the next arrival, so the CDF is flat after tau
        ps = float(latency.cdf[steps])
    paoi = _paoi_from_latency(pdf, cdf, ps, steps, h) if with_paoi and cfg.L == 1 else None
    return BlockAnalysis(latency, ps, paoi)


def _infinite_half(cfg: SystemConfig, steps: int, t_max: float | None = None):
    tau = cfg.inter_arrival
    rates = [mu * (1 - sigma_root(mu, tau)) for mu in cfg.service_rates]
    if t_max is None:
        t_max = infinite_horizon(rates, cfg.erasure_probs, tail=1e-9 / cfg.n_paths, tau=tau)
    n_half = 2 * int(round(t_max * steps / tau)) + 1
    t = np.arange(n_half) * (tau / (2 * steps))
    pdfs = [(1 - e) * r * np.exp(-r * t) for r, e in zip(rates, cfg.erasure_probs)]
    cdfs = [(1 - e) * -np.expm1(-r * t) for r, e in zip(rates, cfg.erasure_probs)]
    return combine_paths(pdfs, cdfs, cfg.k_data)


def _block_latency_infinite(cfg: SystemConfig, steps: int, with_paoi: bool) -> BlockAnalysis:
    h = cfg.inter_arrival / steps
    pdf, cdf = _infinite_half(cfg, steps)
    ps = success_prob_infinite(cfg)
    latency = GridDistribution.from_half_grid(h, pdf, cdf, ps)
    paoi = _paoi_from_latency(pdf, cdf, ps, steps, h) if with_paoi else None
    return BlockAnalysis(latency, ps, paoi)


def _paoi_from_latency(pdf, cdf, ps: float, steps: int, h: float) -> GridDistribution:
    """Peak-AoI law when block outcomes are independent and decoding is in order.

    A decoded block preceded by ``e`` lost blocks has peak age
    ``(e + 1) * tau + D``, with weight ``(1 - ps) ** e``. The sum is evaluated
    one ``tau`` row at a time. Mass beyond ``PAOI_MAX_SAMPLES`` half-grid
    samples is left at infinity.
    """
    if ps <= 0:
        raise ValueError("decoding probability is zero; no block is ever delivered")
    P = 2 * steps
    loss = 1.0 - ps
    e_max = 0 if loss <= 0 else max(0, math.ceil(math.log(PAOI_TAIL) / math.log(loss)))
    e_max = min(e_max, max(0, (PAOI_MAX_SAMPLES - len(pdf)) // P))
    n_out = len(pdf) + (e_max + 1) * P
    rows = -(-n_out // P)
    x_pdf = np.zeros(rows * P)
    x_pdf[1:len(pdf)] = pdf[1:]
    x_cdf = np.full(rows * P, cdf[-1])
    x_cdf[:len(cdf)] = cdf
    x_pdf = x_pdf.reshape(rows, P)
    x_cdf = x_cdf.reshape(rows, P)
    y_pdf = np.zeros_like(x_pdf)
    y_cdf = np.zeros_like(x_cdf)
    for r in range(1, rows):
        y_pdf[r] = x_pdf[r - 1] + loss * y_pdf[r - 1]
        y_cdf[r] = x_cdf[r - 1] + loss * y_cdf[r - 1]
    out_pdf = y_pdf.ravel()[:n_out]
    out_cdf = y_cdf.ravel()[:n_out]
    return GridDistribution.from_half_grid(h, out_pdf, out_cdf, e_max=e_max)


def paoi_L1(cfg: SystemConfig, steps: int = DEFAULT_STEPS_PER_TAU) -> GridDistribution:
    if not cfg.finite or cfg.L != 1:
        raise ValueError("paoi_L1 needs L=1")
    return block_latency(cfg, steps).paoi


def paoi_infinite(cfg: SystemConfig, steps: int = DEFAULT_STEPS_PER_TAU) -> GridDistribution:
    if cfg.finite:
        raise ValueError("paoi_infinite needs an unbounded queue")
    return _block_latency_infinite(cfg, steps, True).paoi


def block_latency_cdf_L1_closed(cfg: SystemConfig, t) -> np.ndarray:
    """Closed-form block CDF for L=1 by inclusion-exclusion over exponential terms.

    ``done`` holds the K-1 earlier deliveries, ``ell`` the decoding path,
    ``late`` the paths whose packet was served (and erased) before time x, and
    ``sign_set`` the subset of ``done`` expanded from ``1 - exp(-mu x)``.
    """
    if not cfg.finite or cfg.L != 1:
        raise ValueError("closed form applies to L=1 only")
    t = np.asarray(t, dtype=float)
    tau = cfg.inter_arrival
    tc = np.minimum(t, tau)
    n, k = cfg.n_paths, cfg.k_data
    mu, eps = cfg.service_rates, cfg.erasure_probs
    everyone = set(range(n))
    out = np.zeros_like(tc)
    for done in subsets(n, k - 1):
        for ell in everyone - set(done):
            others = sorted(everyone - set(done) - {ell})
            for g in range(len(others) + 1):
                for late in itertools.combinations(others, g):
                    waiting = [m for m in others if m not in late]
                    coef = mu[ell] * math.prod(eps[m] for m in waiting)
                    coef *= math.prod(1 - eps[j] for j in (*done, *late, ell))
                    for s in range(len(done) + 1):
                        for sign_set in itertools.combinations(done, s):
                            rate = mu[ell] + sum(mu[j] for j in (*sign_set, *late))
                            out = out + coef * (-1) ** s * -np.expm1(-tc * rate) / rate
    return out if out.ndim else float(out)


# --- finite-L peak AoI by exact enumeration ------------------------------------------


def _window_laws(mu: float, eps: float, tau: float, L: int, pi, window: int, steps: int):
    """Joint law of packet fates over ``window`` consecutive packets on one path.

    The queue always holds the most recent arrivals, so the pre-arrival
    occupancy determines which packets are present. Returns
    ``{prefix: [cdf, pdf, lost]}`` where ``prefix`` are the correct-delivery
    bits of the first ``window - 1`` packets, ``cdf``/``pdf`` describe correct
    delivery of the last packet over its latency ``[0, L*tau]`` (half grid)
    and ``lost`` is the probability the last packet is dropped or erased.
    """
    P = 2 * steps
    u = np.arange(P + 1) * (tau / P)
    last = window - 1
    n_half = L * P + 1

    def fresh():
        return [np.zeros(n_half), np.zeros(n_half), 0.0]

    results = defaultdict(fresh)
    states = defaultdict(float)
    for s, p in enumerate(pi):
        states[(min(s + 1, L), ())] += p

    def served(bits_w, first, stop):
        out = [bits_w]
        for idx in range(first, stop):
            if idx < 0:
                continue
            nxt = []
            for b, w in out:
                nxt.append((b + (1,), w * (1 - eps)))
                if eps > 0:
                    nxt.append((b + (0,), w * eps))
            out = nxt
        return out

    for m in range(last + L):
        new = defaultdict(float)
        for (c, bits), w in states.items():
            oldest = m - c + 1
            k = last - oldest + 1 if m >= last else None
            probs = truncated_departures(mu, tau, c)
            for d in range(c + 1 if k is None else k):
                for b, q in served((bits, w * probs[d]), oldest, oldest + d):
                    if q == 0.0:
                        continue
                    if c - d == L:
                        idx = oldest + d
                        if idx == last:
                            results[b][2] += q
                            continue
                        if idx >= 0:
                            b = b + (0,)
                        new[(L, b)] += q
                    else:
                        new[(c - d + 1, b)] += q
            if k is not None:
                # the tracked packet is the k-th departure in this interval
                cdf_seg = gammainc(k, mu * u)
                pdf_seg = mu * poisson_pmf(mu, k - 1, u)
                off = (m - last) * P
                for b, q in served((bits, w), oldest, last):
                    res = results[b]
                    a = q * (1 - eps)
                    res[0][off:off + P + 1] += a * cdf_seg
                    res[0][off + P + 1:] += a * cdf_seg[-1]
                    res[1][off + 1:off + P + 1] += a * pdf_seg[1:]
                    if off == 0:
                        res[1][0] += a * pdf_seg[0]
                    res[2] += q * eps * cdf_seg[-1]
        states = new
    return dict(results)


def _window_block_laws(cfg: SystemConfig, per_path, window: int):
    """CDF and pdf of the decoding time of the last block in the window, jointly
    with: first block decoded, the ones in between lost."""
    k = cfg.k_data
    n_half = len(next(iter(per_path[0].values()))[0])
    ones = np.ones(n_half)
    dp = {((0,) * (window - 1), 0, 0): ones}
    for laws in per_path:
        nxt = {}

        def add(key, arr):
            if key in nxt:
                nxt[key] = nxt[key] + arr
            else:
                nxt[key] = arr

        for (counts, ct, flag), val in dp.items():
            for prefix, (A, a, lost) in laws.items():
                total = A[-1] + lost
                c2 = tuple(min(x + y, k) for x, y in zip(counts, prefix))
                add((c2, min(ct + 1, k), flag), val * A)
                add((c2, ct, flag), val * (total - A))
                if flag == 0:
                    add((c2, ct, 1), val * a)
        dp = nxt
    cdf = np.zeros(n_half)
    pdf = np.zeros(n_half)
    for (counts, ct, flag), val in dp.items():
        if counts[0] < k or any(c >= k for c in counts[1:]):
            continue
        if flag == 0 and ct >= k:
            cdf += val
        elif flag == 1 and ct == k - 1:
            pdf += val
    return pdf, cdf


def paoi_finite_smallinstance(cfg: SystemConfig, ell_max: int,
                              steps: int = DEFAULT_STEPS_PER_TAU, max_bits: int = 20):
    """Exact peak-AoI law on ``(0, (ell_max+1)*tau]`` for a finite queue.

    Enumerates the joint fates of the packets between two consecutive decoded
    blocks; assumes decoding in order, which holds for N < 2K. Returns the
    truncated law and the probability mass beyond the horizon.
    """
    if not cfg.finite:
        raise ValueError("finite queue required")
    if cfg.n_paths >= 2 * cfg.k_data:
        raise InstanceTooLarge("in-order decoding needs N < 2K")
    if ell_max < 1 or cfg.n_paths * (ell_max + 1) > max_bits:
        raise InstanceTooLarge(f"N*(ell_max+1)={cfg.n_paths * (ell_max + 1)} exceeds {max_bits}")
    L, tau, n = cfg.L, cfg.inter_arrival, cfg.n_paths
    P = 2 * steps
    h = tau / steps
    pis = [steady_state(transition_matrix(mu, tau, L)).probs for mu in cfg.service_rates]
    delivered = []
    for j in range(n):
        pdf, cdf, drop = unconditional_half(cfg, j, steps)
        delivered.append((1 - cfg.erasure_probs[j]) * (1 - drop))
    ps = at_least_k(delivered, cfg.k_data)

    n_out = (ell_max + 1) * P + 1
    out_pdf = np.zeros(n_out)
    out_cdf = np.zeros(n_out)
    for e in range(ell_max):
        window = e + 2
        per_path = [_window_laws(cfg.service_rates[j], cfg.erasure_probs[j], tau, L, pis[j], window, steps)
                    for j in range(n)]
        pdf_e, cdf_e = _window_block_laws(cfg, per_path, window)
        shift = (e + 1) * P
        span = min(len(pdf_e), n_out - shift)
        out_pdf[shift + 1:shift + span] += pdf_e[1:span]
        out_cdf[shift:shift + span] += cdf_e[:span]
        out_cdf[shift + span:] += cdf_e[span - 1]
    out_pdf /= ps
    out_cdf /= ps
    law = GridDistribution.from_half_grid(h, out_pdf, out_cdf)
    return law, max(0.0, 1.0 - law.total_mass)


def paoi_L2_smallinstance(cfg: SystemConfig, ell_max: int, steps: int = DEFAULT_STEPS_PER_TAU):
    if not cfg.finite or cfg.L != 2:
        raise ValueError("paoi_L2_smallinstance needs L=2")
    return paoi_finite_smallinstance(cfg, ell_max, steps)


def window_pattern_probs(cfg: SystemConfig, j: int, window: int, steps: int = DEFAULT_STEPS_PER_TAU):
    """Probabilities of every correct-delivery pattern over ``window`` packets on path ``j``."""
    mu, tau, L = cfg.service_rates[j], cfg.inter_arrival, cfg.L
    pi = steady_state(transition_matrix(mu, tau, L)).probs
    out = {}
    for prefix, (A, _, lost) in _window_laws(mu, cfg.erasure_probs[j], tau, L, pi, window, steps).items():
        out[prefix + (1,)] = float(A[-1])
        out[prefix + (0,)] = float(lost)
    return out
