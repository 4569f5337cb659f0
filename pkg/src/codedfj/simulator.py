"""Discrete-event Monte Carlo of the coded fork-join system.

Each path is a single exponential server fed every ``tau`` seconds. A full
buffer drops its oldest packet on arrival, including the one in service; the
next packet then starts a fresh service. Erasure is decided at service
completion.

Random numbers come from numpy's PCG64, one substream per path spawned from
``SeedSequence(rng_seed)``. Every packet gets one exponential service draw and
one uniform erasure draw up front, so results depend only on the seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterator

import numpy as np
from numba import njit

from .core import SystemConfig
from .stats import MetricSummary, empirical_cdf, summarize


class Outcome(IntEnum):
    DELIVERED = 0
    ERASED = 1
    DROPPED = 2


TRACE_CODES = {0: "D", 1: "E", 2: "X"}


@dataclass(frozen=True)
class SimParams:
    n_blocks: int = 1_000_000
    warmup_blocks: int = 1_000
    rng_seed: int = 1
    record_traces: bool = False

    def __post_init__(self):
        if self.n_blocks <= self.warmup_blocks:
            raise ValueError("n_blocks must exceed warmup_blocks")
        if self.warmup_blocks < 0:
            raise ValueError("warmup_blocks must be nonnegative")


@njit(cache=True)
def _run_queue(tau, cap, service, erased, delivery, outcome, seen):
    n = service.shape[0]
    head = 0
    start = 0.0
    for m in range(n):
        arrival = m * tau
        # departures at or before the arrival instant go first
        while head < m and start + service[head] <= arrival:
            done = start + service[head]
            if erased[head]:
                outcome[head] = 1
            else:
                outcome[head] = 0
                delivery[head] = done
            start = done
            head += 1
        occupancy = m - head
        seen[m] = occupancy
        if cap > 0 and occupancy >= cap:
            outcome[head] = 2
            head += 1
            start = arrival
        if head == m:
            start = arrival
    while head < n:
        done = start + service[head]
        if erased[head]:
            outcome[head] = 1
        else:
            outcome[head] = 0
            delivery[head] = done
        start = done
        head += 1


@dataclass(frozen=True, eq=False)
class PathTrace:
    """Per-packet outcomes of one path; delivery times are absolute (inf if lost)."""

    delivery: np.ndarray
    outcome: np.ndarray
    seen: np.ndarray


def path_streams(seed: int, n_paths: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n_paths)]


def _cooldown(cfg: SystemConfig) -> int:
    # a finite-buffer packet's fate is settled by the L arrivals after it
    return cfg.L if cfg.finite else 0


def simulate_path(cfg: SystemConfig, j: int, params: SimParams,
                  rng: np.random.Generator | None = None) -> PathTrace:
    """Outcomes of the first ``params.n_blocks`` packets on path ``j``."""
    if rng is None:
        rng = path_streams(params.rng_seed, cfg.n_paths)[j]
    n = params.n_blocks + _cooldown(cfg)
    service = rng.exponential(1.0 / cfg.service_rates[j], n)
    erased = rng.random(n) < cfg.erasure_probs[j]
    delivery = np.full(n, np.inf)
    outcome = np.full(n, -1, dtype=np.int8)
    seen = np.zeros(n, dtype=np.int64)
    cap = cfg.L if cfg.finite else -1
    _run_queue(float(cfg.inter_arrival), cap, service, erased, delivery, outcome, seen)
    k = params.n_blocks
    return PathTrace(delivery[:k], outcome[:k], seen[:k])


@dataclass(frozen=True)
class BlockRecord:
    index: int
    gen_time: float
    per_path_delivery: tuple
    decode_time: float
    latency: float


@dataclass(frozen=True, eq=False)
class AoiTrace:
    """Peak-AoI samples, the blocks they belong to and their decode instants."""

    block_index: np.ndarray
    paoi: np.ndarray
    decode_time: np.ndarray


@dataclass(frozen=True, eq=False)
class SimulationResult:
    cfg: SystemConfig
    params: SimParams
    delivery: np.ndarray      # (n_blocks, N) absolute times, inf if lost
    outcome: np.ndarray       # (n_blocks, N) Outcome codes
    seen: np.ndarray          # (n_blocks, N) occupancy seen by each arrival
    decode_time: np.ndarray   # (n_blocks,) inf if undecodable
    aoi: AoiTrace
    summary: MetricSummary

    @property
    def gen_time(self) -> np.ndarray:
        return np.arange(len(self.decode_time)) * self.cfg.inter_arrival

    @property
    def latency(self) -> np.ndarray:
        return self.decode_time - self.gen_time

    @property
    def kept(self) -> slice:
        return slice(self.params.warmup_blocks, None)

    def records(self) -> Iterator[BlockRecord]:
        tau = self.cfg.inter_arrival
        for i in range(len(self.decode_time)):
            per_path = tuple(
                float(self.delivery[i, j]) if self.outcome[i, j] == Outcome.DELIVERED
                else Outcome(self.outcome[i, j]).name.lower()
                for j in range(self.cfg.n_paths))
            yield BlockRecord(i, i * tau, per_path, float(self.decode_time[i]),
                              float(self.decode_time[i] - i * tau))

    def path_latency(self, j: int) -> np.ndarray:
        return (self.delivery[:, j] - self.gen_time)[self.kept]

    def write_trace(self, path) -> None:
        paoi = np.full(len(self.decode_time), np.nan)
        paoi[self.aoi.block_index] = self.aoi.paoi
        gen = self.gen_time
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "gen_time", "decode_time", "latency", "paoi"]
                       + [f"path{j}" for j in range(self.cfg.n_paths)])
            for i in range(self.params.warmup_blocks, len(gen)):
                dec = self.decode_time[i]
                fin = math.isfinite(dec)
                w.writerow([i, repr(float(gen[i])),
                            repr(float(dec)) if fin else "NA",
                            repr(float(dec - gen[i])) if fin else "NA",
                            repr(float(paoi[i])) if not math.isnan(paoi[i]) else "NA"]
                           + [TRACE_CODES[o] for o in self.outcome[i]])


def decode_times(delivery: np.ndarray, k: int) -> np.ndarray:
    """K-th smallest delivery time per block (inf when fewer than K arrive)."""
    return np.partition(delivery, k - 1, axis=1)[:, k - 1]


def peak_aoi(gen: np.ndarray, decode: np.ndarray, tau: float) -> AoiTrace:
    """Peak ages at every decode that brings a fresher block than any before it.

    Freshness starts at generation time ``-tau`` (as if a block had just been
    decoded at time 0). Decodes of blocks older than the freshest are not
    peaks and produce no sample.
    """
    ok = np.flatnonzero(np.isfinite(decode))
    order = ok[np.lexsort((gen[ok], decode[ok]))]
    g = gen[order]
    freshest_before = np.maximum.accumulate(np.concatenate([[-tau], g]))[:-1]
    fresh = g > freshest_before
    idx = order[fresh]
    return AoiTrace(idx, decode[idx] - freshest_before[fresh], decode[idx])


def sequential_peak_aoi(gen: np.ndarray, decode: np.ndarray, tau: float) -> AoiTrace:
    """Peak ages measured against the previous decoded block in generation order.

    Matches the true AoI whenever blocks decode in order; when a later block
    overtakes an earlier one the two conventions differ.
    """
    ok = np.flatnonzero(np.isfinite(decode))
    prev_gen = np.concatenate([[-tau], gen[ok][:-1]])
    return AoiTrace(ok, decode[ok] - prev_gen, decode[ok])


PAOI_CONVENTIONS = {"exact": peak_aoi, "sequential": sequential_peak_aoi}


def simulate_system(cfg: SystemConfig, params: SimParams, levels=(0.95, 0.99),
                    paoi_convention: str = "exact") -> SimulationResult:
    """Run all paths, decode blocks and measure peak AoI.

    ``paoi_convention="exact"`` follows the AoI process itself, so a block
    decoded after a fresher one yields no peak. ``"sequential"`` instead
    measures every decoded block against the last decoded block before it
    in generation order.
    """
    streams = path_streams(params.rng_seed, cfg.n_paths)
    traces = [simulate_path(cfg, j, params, streams[j]) for j in range(cfg.n_paths)]
    delivery = np.column_stack([t.delivery for t in traces])
    outcome = np.column_stack([t.outcome for t in traces])
    seen = np.column_stack([t.seen for t in traces])
    decode = decode_times(delivery, cfg.k_data)
    gen = np.arange(params.n_blocks) * cfg.inter_arrival
    aoi = PAOI_CONVENTIONS[paoi_convention](gen, decode, cfg.inter_arrival)
    keep = aoi.block_index >= params.warmup_blocks
    aoi = AoiTrace(aoi.block_index[keep], aoi.paoi[keep], aoi.decode_time[keep])
    lat = (decode - gen)[params.warmup_blocks:]
    lat_cdf = empirical_cdf(lat)
    summary = summarize(lat_cdf.total_mass, lat_cdf, empirical_cdf(aoi.paoi), levels)
    return SimulationResult(cfg, params, delivery, outcome, seen, decode, aoi, summary)
