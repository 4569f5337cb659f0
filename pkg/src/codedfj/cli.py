"""Scenario runner: expands JSON parameter grids, runs the engines, writes CSVs.

Usage::

    codedfj run <scenario.json | builtin-name> --out DIR [--engine analytic|sim|both]
                [--seed S] [--blocks N] [--grid-step H] [--jobs J]
    codedfj list
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .block import InstanceTooLarge, StateSpaceTooLarge, block_latency
from .core import ConfigError, SystemConfig, parse_queue_cap
from .simulator import SimParams, simulate_system
from .stats import ks_distance, percentile

log = logging.getLogger("codedfj")

ENGINES = ("analytic", "sim", "both")
DEFAULT_LEVELS = (0.95, 0.99)
CDF_POINTS = 201
STABILITY_RTOL = 1e-12


class ScenarioError(ValueError):
    code = "invalid_scenario"


def redundancy_params(M: float, K: int, N: int, tau: float, mu=1.0, min_mu=None):
    """Per-path rates when a payload of size ``M`` is cut into ``K`` packets.

    Service time grows linearly with the packet size ``M/K``, so the rate
    becomes ``K*mu/M``. The offered traffic ``G = M / (N*tau*min(mu))`` is
    the load on the slowest path when no redundancy is added (K = N).
    """
    if M <= 0:
        raise ValueError("payload size must be positive")
    if not 1 <= K <= N:
        raise ValueError(f"need 1 <= K <= N, got K={K}, N={N}")
    mu_vec = np.full(N, float(mu)) if np.isscalar(mu) else np.asarray(mu, dtype=float)
    if min_mu is None:
        min_mu = float(mu_vec.min())
    return tuple(K * mu_vec / M), M / (N * tau * min_mu)


def unstable(cfg: SystemConfig) -> bool:
    """True for an unbounded queue whose arrival rate reaches some path's service rate."""
    if cfg.finite:
        return False
    lam = 1.0 / cfg.inter_arrival
    return any(lam >= mu * (1 - STABILITY_RTOL) for mu in cfg.service_rates)


def _mu_vector(spec, n: int):
    if isinstance(spec, dict):
        base = float(spec.get("base", 1.0))
        count = int(spec.get("count", 0))
        if count > n:
            raise ScenarioError(f"mu override count {count} exceeds N={n}")
        return [float(spec["value"])] * count + [base] * (n - count)
    if np.isscalar(spec):
        return [float(spec)] * n
    return [float(x) for x in spec]


def _eps_vector(spec, n: int):
    return [float(spec)] * n if np.isscalar(spec) else [float(x) for x in spec]


def _as_grid(value, nested: bool):
    """Lists become grid axes. For ``nested`` fields (codes) only a list of
    lists is a grid."""
    if nested:
        if isinstance(value, list) and value and isinstance(value[0], (list, dict)):
            return value
        return [value]
    return value if isinstance(value, list) else [value]


def _path_axis(value, n: int):
    """Grid axis for a per-path field (mu or eps) given N paths.

    A flat numeric list of length N is one per-path vector; any other flat
    list is a grid of scalars; a list of lists or dicts is a grid of entries.
    """
    if not isinstance(value, list):
        return [value]
    if value and isinstance(value[0], (list, dict)):
        return value
    return [value] if len(value) == n else value


def _frange(start: float, stop: float, step: float):
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 12) for i in range(n)]


@dataclass
class GridPoint:
    index: int
    K: int
    N: int
    L: object
    tau: float
    mu: list
    eps: list
    engine: str
    n_blocks: int
    warmup: int
    seed: int
    steps: int
    levels: tuple
    paoi_convention: str = "exact"
    extras: dict = field(default_factory=dict)

    def config(self) -> SystemConfig:
        return SystemConfig(self.N, self.K, parse_queue_cap(self.L), self.tau, tuple(self.mu), tuple(self.eps))


def point_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([int(base), int(index)]).generate_state(1, np.uint64)[0])


def load_scenario(ref) -> dict:
    """Load a scenario from a path or a built-in name."""
    path = Path(ref)
    if path.suffix != ".json" or not path.exists():
        builtin = resources.files("codedfj") / "scenarios" / f"{ref}.json"
        if not builtin.is_file():
            raise ScenarioError(f"no scenario file or built-in named {ref!r}")
        text = builtin.read_text()
    else:
        text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    data.setdefault("name", path.stem)
    return data


def builtin_scenarios() -> list[str]:
    root = resources.files("codedfj") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _steps_for(tau: float, grid_step) -> int:
    if grid_step is None:
        return 400
    steps = max(1, round(tau / grid_step))
    return int(steps)


def expand(scenario: dict, engine=None, seed=None, blocks=None, grid_step=None) -> list[GridPoint]:
    known = {"name", "description", "code", "L", "tau", "mu", "eps", "engine", "n_blocks", "warmup",
             "seed", "sweep", "redundancy", "levels", "grid_step", "paoi_convention"}
    unknown = set(scenario) - known
    if unknown:
        raise ScenarioError(f"unknown scenario fields: {sorted(unknown)}")
    engine = engine or scenario.get("engine", "both")
    if engine == "simulate":
        engine = "sim"
    if engine not in ENGINES:
        raise ScenarioError(f"engine must be one of {ENGINES}, got {engine!r}")
    n_blocks = int(blocks or scenario.get("n_blocks", 1_000_000))
    warmup = int(scenario.get("warmup", min(1000, n_blocks // 10)))
    base_seed = int(seed if seed is not None else scenario.get("seed", 1))
    grid_step = grid_step if grid_step is not None else scenario.get("grid_step")
    levels = tuple(float(x) for x in scenario.get("levels", DEFAULT_LEVELS))
    convention = scenario.get("paoi_convention", "exact")

    if "sweep" in scenario:
        sw = scenario["sweep"].get("tau")
        if not isinstance(sw, dict):
            raise ScenarioError("sweep must look like {\"tau\": {\"start\", \"stop\", \"step\"}}")
        taus = _frange(float(sw["start"]), float(sw["stop"]), float(sw["step"]))
        if not taus or min(taus) <= 0:
            raise ScenarioError("tau sweep must be positive and non-empty")
    else:
        if "tau" not in scenario:
            raise ScenarioError("scenario needs tau or a tau sweep")
        taus = [float(t) for t in _as_grid(scenario["tau"], False)]

    caps = _as_grid(scenario.get("L", 1), False)
    eps_spec_all = scenario.get("eps", 0.0)
    mu_spec_all = scenario.get("mu", 1.0)

    red = scenario.get("redundancy")
    if red is not None:
        n = int(red["N"])
        ks = red.get("K", list(range(1, n + 1)))
        ks = ks if isinstance(ks, list) else [ks]
        if "M" in red:
            payloads = [("M", float(m)) for m in _as_grid(red["M"], False)]
        elif "G" in red:
            payloads = [("G", float(g)) for g in _as_grid(red["G"], False)]
        else:
            raise ScenarioError("redundancy needs M or G")
        codes = [(int(k), n) for k in ks]
    else:
        payloads = [None]
        codes = [tuple(int(x) for x in c) for c in _as_grid(scenario.get("code"), True)]
        if any(len(c) != 2 for c in codes):
            raise ScenarioError("code must be [K, N] or a list of them")

    points = []
    combos = [(payload, (k, n), mu_spec, eps_spec, cap, tau)
              for payload, (k, n) in itertools.product(payloads, codes)
              for mu_spec, eps_spec, cap, tau in itertools.product(
                  _path_axis(mu_spec_all, n), _path_axis(eps_spec_all, n), caps, taus)]
    for payload, (k, n), mu_spec, eps_spec, cap, tau in combos:
        mu = _mu_vector(mu_spec, n)
        eps = _eps_vector(eps_spec, n)
        extras = {}
        if payload is not None:
            kind, value = payload
            # G fixes the payload at the scenario's reference tau
            ref_tau = float(scenario["tau"]) if kind == "G" else tau
            M = value if kind == "M" else value * n * ref_tau * min(mu)
            mu, G = redundancy_params(M, k, n, tau, mu)
            mu = list(mu)
            extras = {"M": M, "G": G}
        idx = len(points)
        points.append(GridPoint(idx, k, n, cap, tau, mu, eps, engine, n_blocks, warmup,
                                point_seed(base_seed, idx), _steps_for(tau, grid_step), levels,
                                convention, extras))
    for p in points:
        try:
            p.config()
        except ConfigError as exc:
            raise ScenarioError(f"grid point {p.index}: {exc}") from exc
    return points


def _cdf_axis(hi: float, tau: float) -> np.ndarray:
    hi = max(hi, tau)
    return np.linspace(0.0, hi, CDF_POINTS)


def evaluate_point(p: GridPoint) -> dict:
    """Run the requested engines on one grid point; returns plain rows."""
    cfg = p.config()
    res = {"index": p.index, "status": [], "ps_analytic": None, "ps_sim": None,
           "paoi_analytic": {}, "paoi_sim": {}, "ks_latency": None, "ks_paoi": None,
           "latency_rows": [], "paoi_rows": []}
    lat_a = paoi_a = lat_s = paoi_s = None
    run_sim = p.engine in ("sim", "both")
    if p.engine in ("analytic", "both"):
        if unstable(cfg):
            res["status"].append("unstable")
        else:
            try:
                ba = block_latency(cfg, steps=p.steps)
                lat_a, paoi_a = ba.latency, ba.paoi
                res["ps_analytic"] = ba.success_prob
            except (StateSpaceTooLarge, InstanceTooLarge) as exc:
                warnings.warn(f"point {p.index}: analytic engine infeasible ({exc}); using simulation")
                res["status"].append("analytic_fallback")
                run_sim = True
    if run_sim:
        if unstable(cfg):
            res["status"].append("nonstationary")
        sim = simulate_system(cfg, SimParams(p.n_blocks, p.warmup, p.seed), p.levels, p.paoi_convention)
        lat_s, paoi_s = sim.summary.latency_cdf, sim.summary.paoi_cdf
        res["ps_sim"] = sim.summary.success_prob
    for lv in p.levels:
        if paoi_a is not None:
            res["paoi_analytic"][lv] = percentile(paoi_a, lv)
        if paoi_s is not None and paoi_s.n_total:
            res["paoi_sim"][lv] = percentile(paoi_s, lv)
    if lat_a is not None and lat_s is not None:
        res["ks_latency"] = ks_distance(lat_a, lat_s)
        if paoi_a is not None:
            res["ks_paoi"] = ks_distance(paoi_a, paoi_s)

    tau = cfg.inter_arrival
    if lat_a is None and lat_s is None:
        res["status"] = ";".join(res["status"]) or "ok"
        return res
    if cfg.finite:
        hi = (cfg.L + 1) * tau
    elif lat_a is not None:
        hi = percentile(lat_a, min(0.999 * lat_a.total_mass, 0.999))
    else:
        hi = percentile(lat_s, min(0.999 * lat_s.total_mass, 0.999)) if lat_s.total_mass > 0 else tau
    for t in _cdf_axis(hi if math.isfinite(hi) else 10 * tau, tau):
        res["latency_rows"].append((t, None if lat_a is None else float(lat_a.cdf_at(t)),
                                    None if lat_s is None else float(lat_s(t))))
    ref = paoi_a if paoi_a is not None else paoi_s
    if ref is not None and ref.total_mass > 0:
        hi = percentile(ref, 0.999) if ref.total_mass >= 0.999 else 20 * tau
        for w in _cdf_axis(hi if math.isfinite(hi) else 20 * tau, tau):
            res["paoi_rows"].append((w, None if paoi_a is None else float(paoi_a.cdf_at(w)),
                                     None if paoi_s is None else float(paoi_s(w))))
    res["status"] = ";".join(res["status"]) or "ok"
    return res


def _fmt(x) -> str:
    if x is None:
        return "NA"
    if isinstance(x, (float, np.floating)):
        if math.isinf(x):
            return "inf"
        return repr(float(x))
    return str(x)


def _vec(v) -> str:
    return _fmt(float(v[0])) if len(set(v)) == 1 else ";".join(_fmt(float(x)) for x in v)


def _lvl(level: float) -> str:
    return f"p{level * 100:g}"


def _point_cols(p: GridPoint):
    return [p.index, p.K, p.N, "inf" if parse_queue_cap(p.L) == math.inf else int(p.L),
            _fmt(float(p.tau)), _vec(p.eps), _vec(p.mu),
            _fmt(p.extras.get("M")), _fmt(p.extras.get("G")), p.engine]


POINT_HEADER = ["point", "K", "N", "L", "tau", "eps", "mu", "M", "G", "engine"]


def _write(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) if not isinstance(x, str) else x for x in r])


def _map_ordered(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def sweep_tau(points: list[GridPoint], results: list[dict]) -> tuple[list, list]:
    """Wide table: one row per (code, eps, mu, tau) with PAoI percentiles per L."""
    caps = []
    for p in points:
        cap = "inf" if parse_queue_cap(p.L) == math.inf else str(int(p.L))
        if cap not in caps:
            caps.append(cap)
    levels = points[0].levels if points else DEFAULT_LEVELS
    header = ["K", "N", "eps", "mu", "M", "tau"]
    for cap in caps:
        for lv in levels:
            header += [f"L{cap}_{_lvl(lv)}_analytic", f"L{cap}_{_lvl(lv)}_sim"]
    table = {}
    for p, r in zip(points, results):
        key = (p.K, p.N, _vec(p.eps), _vec(p.mu), _fmt(p.extras.get("M")), _fmt(float(p.tau)))
        row = table.setdefault(key, {})
        cap = "inf" if parse_queue_cap(p.L) == math.inf else str(int(p.L))
        for lv in levels:
            row[f"L{cap}_{_lvl(lv)}_analytic"] = r["paoi_analytic"].get(lv)
            row[f"L{cap}_{_lvl(lv)}_sim"] = r["paoi_sim"].get(lv)
    rows = []
    for key, vals in table.items():
        rows.append(list(key) + [vals.get(h) for h in header[6:]])
    return header, rows


def run_scenario(scenario, out_dir, engine=None, seed=None, blocks=None, grid_step=None,
                 jobs: int = 1) -> dict:
    """Run every grid point of ``scenario`` and write CSV artifacts into ``out_dir``."""
    if not isinstance(scenario, dict):
        scenario = load_scenario(scenario)
    points = expand(scenario, engine, seed, blocks, grid_step)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = _map_ordered(evaluate_point, points, jobs)
    levels = points[0].levels if points else DEFAULT_LEVELS
    files = {}

    rel = [_point_cols(p) + [r["status"], r["ps_analytic"], r["ps_sim"]] for p, r in zip(points, results)]
    files["reliability"] = "reliability.csv"
    _write(out / "reliability.csv", POINT_HEADER + ["status", "ps_analytic", "ps_sim"], rel)

    pct_header = POINT_HEADER + ["status"]
    for lv in levels:
        pct_header += [f"paoi_{_lvl(lv)}_analytic", f"paoi_{_lvl(lv)}_sim"]
    pct_header.append("saturated")
    pct_rows = []
    for p, r in zip(points, results):
        vals = []
        for lv in levels:
            vals += [r["paoi_analytic"].get(lv), r["paoi_sim"].get(lv)]
        saturated = any(v is not None and math.isinf(v) for v in vals)
        pct_rows.append(_point_cols(p) + [r["status"]] + vals + [int(saturated)])
    files["percentiles"] = "percentiles.csv"
    _write(out / "percentiles.csv", pct_header, pct_rows)

    lat_rows = [[p.index, t, a, s] for p, r in zip(points, results) for t, a, s in r["latency_rows"]]
    files["latency_cdf"] = "latency_cdf.csv"
    _write(out / "latency_cdf.csv", ["point", "t", "cdf_analytic", "cdf_sim"], lat_rows)

    paoi_rows = [[p.index, w, a, s] for p, r in zip(points, results) for w, a, s in r["paoi_rows"]]
    files["paoi_cdf"] = "paoi_cdf.csv"
    _write(out / "paoi_cdf.csv", ["point", "omega", "cdf_analytic", "cdf_sim"], paoi_rows)

    if any(p.engine == "both" for p in points):
        files["ks"] = "ks.csv"
        _write(out / "ks.csv", ["point", "ks_latency", "ks_paoi"],
               [[p.index, r["ks_latency"], r["ks_paoi"]] for p, r in zip(points, results)])

    if "sweep" in scenario:
        header, rows = sweep_tau(points, results)
        files["sweep"] = "sweep.csv"
        _write(out / "sweep.csv", header, rows)

    manifest = {
        "scenario": scenario.get("name"),
        "version": __version__,
        "rng": "numpy PCG64, SeedSequence([seed, point]) then one spawned substream per path",
        "files": files,
        "points": [{**{k: v for k, v in asdict(p).items() if k not in ("extras", "levels")},
                    "levels": list(p.levels), **p.extras,
                    "L": "inf" if parse_queue_cap(p.L) == math.inf else int(p.L)} for p in points],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return {"points": points, "results": results, "files": {k: out / v for k, v in files.items()}}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="codedfj", description="Coded multipath fork-join queue experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario file or built-in scenario")
    run.add_argument("scenario")
    run.add_argument("--out", required=True)
    run.add_argument("--engine", choices=ENGINES)
    run.add_argument("--seed", type=int)
    run.add_argument("--blocks", type=int)
    run.add_argument("--grid-step", type=float)
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("list", help="list built-in scenarios")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list":
        for name in builtin_scenarios():
            print(name)
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        info = run_scenario(args.scenario, args.out, args.engine, args.seed, args.blocks,
                            args.grid_step, args.jobs)
    except (ScenarioError, ConfigError, ValueError, KeyError) as exc:
        code = getattr(exc, "code", "invalid_scenario")
        print(json.dumps({"error": code, "message": str(exc)}), file=sys.stderr)
        return 2
    log.info("wrote %d grid points to %s", len(info["points"]), args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
