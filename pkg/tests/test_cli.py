import csv
import json
import math

import pytest

from codedfj import cli
from codedfj.block import StateSpaceTooLarge
from codedfj.cli import builtin_scenarios, expand, load_scenario, main, redundancy_params, run_scenario


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_redundancy_params_examples():
    mu, G = redundancy_params(2.25, 4, 6, 1.5, 1.0)
    assert G == pytest.approx(0.25)
    assert mu == pytest.approx((4 / 2.25,) * 6)
    assert redundancy_params(4.5, 4, 6, 1.5, 1.0)[1] == pytest.approx(0.5)
    # K = N with M = N*tau*mu sits on the G = 1 boundary
    assert redundancy_params(6 * 1.5 * 0.8, 6, 6, 1.5, 0.8)[1] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        redundancy_params(1.0, 7, 6, 1.5)


def test_builtin_fig4_has_24_points():
    assert "fig4-reliability" in builtin_scenarios()
    points = expand(load_scenario("fig4-reliability"))
    assert len(points) == 24
    assert {(p.K, p.N) for p in points} == {(4, 5), (4, 6), (4, 7)}
    assert {p.eps[0] for p in points} == {0.1, 0.2}
    assert len({p.seed for p in points}) == 24


def test_sweep_grid():
    points = expand(load_scenario("fig7-percentiles"))
    taus = sorted({p.tau for p in points})
    assert len(taus) == 71 and taus[0] == 0.5 and taus[-1] == 4.0


def test_per_path_vectors():
    pts = expand({"code": [4, 5], "tau": 2.0, "L": 1, "eps": [0.1, 0.1, 0.1, 0.2, 0.2], "mu": [1, 2]})
    assert len(pts) == 2
    assert pts[0].eps == [0.1, 0.1, 0.1, 0.2, 0.2]
    pts = expand({"code": [4, 6], "tau": 2.0, "L": 1, "mu": {"base": 1.0, "value": 1.25, "count": 3}})
    assert pts[0].mu == [1.25] * 3 + [1.0] * 3


def test_run_is_byte_identical(tmp_path):
    sc = {"name": "tiny", "code": [2, 3], "eps": 0.1, "L": [1, "inf"], "tau": 2.0,
          "engine": "both", "n_blocks": 5000, "seed": 3}
    a = run_scenario(sc, tmp_path / "a")
    b = run_scenario(sc, tmp_path / "b")
    for name, path in a["files"].items():
        assert path.read_bytes() == b["files"][name].read_bytes(), name
    rel = rows(a["files"]["reliability"])
    assert [r["status"] for r in rel] == ["ok", "ok"]
    assert float(rel[0]["ps_analytic"]) == pytest.approx(float(rel[0]["ps_sim"]), abs=0.03)
    assert set(a["files"]) == {"reliability", "percentiles", "latency_cdf", "paoi_cdf", "ks"}
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["points"][1]["L"] == "inf"


def test_single_point_sweep(tmp_path):
    sc = {"code": [4, 5], "eps": 0.1, "L": 1, "engine": "analytic",
          "sweep": {"tau": {"start": 1.4, "stop": 1.4, "step": 0.05}}}
    out = run_scenario(sc, tmp_path)
    assert len(rows(out["files"]["sweep"])) == 1


def test_unstable_points_are_flagged(tmp_path):
    sc = {"redundancy": {"N": 6, "G": 0.5}, "eps": 0.1, "L": "inf", "tau": 1.5,
          "engine": "both", "n_blocks": 3000}
    out = run_scenario(sc, tmp_path)
    status = {int(r["K"]): r["status"] for r in rows(out["files"]["reliability"])}
    assert status == {1: "unstable;nonstationary", 2: "unstable;nonstationary", 3: "unstable;nonstationary",
                      4: "ok", 5: "ok", 6: "ok"}
    pct = rows(out["files"]["percentiles"])
    assert all(r["paoi_p95_analytic"] == "NA" for r in pct[:3])


def test_analytic_fallback(tmp_path, monkeypatch):
    def refuse(*args, **kwargs):
        raise StateSpaceTooLarge("too many states")
    monkeypatch.setattr(cli, "block_latency", refuse)
    sc = {"code": [2, 3], "eps": 0.1, "L": 2, "tau": 2.0, "engine": "analytic", "n_blocks": 3000}
    with pytest.warns(UserWarning, match="infeasible"):
        out = run_scenario(sc, tmp_path)
    r = rows(out["files"]["reliability"])[0]
    assert r["status"] == "analytic_fallback" and r["ps_analytic"] == "NA" and r["ps_sim"] != "NA"


def test_saturated_percentiles(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "percentile", lambda law, level: math.inf if level > 0.98 else 1.0)
    sc = {"code": [2, 3], "eps": 0.1, "L": 1, "tau": 2.0, "engine": "analytic"}
    out = run_scenario(sc, tmp_path)
    r = rows(out["files"]["percentiles"])[0]
    assert (r["paoi_p95_analytic"], r["paoi_p99_analytic"], r["saturated"]) == ("1.0", "inf", "1")


@pytest.mark.parametrize("bad", [
    {"code": [5, 4], "tau": 2.0},
    {"code": [4, 5], "tau": 2.0, "colour": "red"},
    {"code": [4, 5]},
    {"code": [4, 5], "tau": 2.0, "engine": "magic"},
])
def test_invalid_scenarios_exit_nonzero(tmp_path, capsys, bad):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    assert main(["run", str(path), "--out", str(tmp_path / "out")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] in ("invalid_scenario", "k_exceeds_n")


def test_list_command(capsys):
    assert main(["list"]) == 0
    assert "fig10-redundancy" in capsys.readouterr().out.split()
