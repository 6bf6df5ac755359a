import csv
import json

import numpy as np
import pytest

from egdl.cli import main
from egdl.mnsir import DISEASE_FREE_PARAMS, equilibria
from egdl.panel import load_panel

SMALL = """
[synth]
n = 6
T = 40
extra_edges = 3
sd = 2
seasonal_amplitude = 3
n_sources = 2

[window]
t_w = 8
q = 4
horizons = 2,4

[forecaster]
epochs = 5
hidden = 8,8

[calibrate]
warmup = 60
draws = 120
"""


def run(*argv):
    return main([str(a) for a in argv])


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.ini"
    cfg.write_text(SMALL)
    out = root / "synth"
    assert run("synth", "--config", cfg, "--out", out, "--seed", 1) == 0
    return cfg, out


def test_synth_outputs(small):
    _, out = small
    assert load_panel(out / "Y.csv").values.shape == (6, 40)
    assert load_panel(out / "infected.csv").values.shape == (6, 44)
    m = manifest(out)
    assert m["status"] == "ok" and m["exit_code"] == 0 and m["seed"] == 1
    assert "Y.csv" in m["outputs"] and len(m["config_hash"]) == 64
    assert "timestamp" not in json.dumps(m)


@pytest.mark.parametrize("mode", ["series", "parallel", "baseline"])
def test_forecast_modes(small, tmp_path, mode):
    cfg, src = small
    out = tmp_path / mode
    code = run("forecast", "--config", cfg, "--data", src / "Y.csv", "--infected",
               src / "infected.csv", "--mode", mode, "--out", out)
    assert code == 0
    rows = list(csv.DictReader(open(out / "forecast.csv")))
    assert len(rows) == 6 * 4
    assert {r["step"] for r in rows} == {"1", "2", "3", "4"}


def test_forecast_with_bands(small, tmp_path):
    cfg, src = small
    out = tmp_path / "bands"
    assert run("forecast", "--config", cfg, "--data", src / "Y.csv", "--infected",
               src / "infected.csv", "--level", 0.2, "--out", out) == 0
    rows = list(csv.DictReader(open(out / "forecast.csv")))
    assert all(float(r["lower"]) <= float(r["point"]) <= float(r["upper"]) for r in rows)


def test_evaluate_forecast_files(small, tmp_path):
    cfg, src = small
    a, b = tmp_path / "a", tmp_path / "b"
    for out, mode in ((a, "series"), (b, "baseline")):
        run("forecast", "--config", cfg, "--data", src / "Y.csv", "--infected",
            src / "infected.csv", "--mode", mode, "--out", out)
    # score against the panel that includes the forecast window
    full = load_panel(src / "Y_full.csv")
    ev = tmp_path / "ev"
    assert run("evaluate", "--config", cfg, "--data", src / "Y_full.csv", "--forecasts",
               a / "forecast.csv", b / "forecast.csv", "--out", ev) == 0
    lines = (ev / "report.csv").read_text().splitlines()
    assert lines[0] == "model,horizon,metric,mean,sd"
    assert {ln.split(",")[0] for ln in lines[1:]} == {"a-forecast", "b-forecast"}
    assert len(lines) == 1 + 2 * 4
    assert full.values.shape == (6, 44)


def test_evaluate_backtest(small, tmp_path):
    cfg, src = small
    ev = tmp_path / "bt"
    assert run("evaluate", "--config", cfg, "--data", src / "Y.csv", "--infected",
               src / "infected.csv", "--out", ev) == 0
    models = {ln.split(",")[0] for ln in (ev / "report.csv").read_text().splitlines()[1:]}
    assert models == {"Naive", "MN-SIR", "Forecaster", "EGDL-Series", "EGDL-Parallel"}


def test_simulate_reaches_dfe(tmp_path):
    out = tmp_path / "sim"
    cfg = tmp_path / "sim.ini"
    cfg.write_text("[model]\nt_end = 2000\nrecord_every = 100\n")
    assert run("simulate", "--graph", "japan47", "--config", cfg, "--out", out) == 0
    rep = json.loads((out / "equilibria.json").read_text())
    eq = equilibria(DISEASE_FREE_PARAMS)
    assert rep["classification"] == eq.classification
    assert rep["final_max_abs_dev"]["I"] < 1e-3
    assert rep["source"] == 19


def test_reruns_are_byte_identical(tmp_path):
    cfg = tmp_path / "sim.ini"
    cfg.write_text("[model]\nt_end = 50\nrecord_every = 10\n")
    out = tmp_path / "r"
    names = ("trajectory.csv", "equilibria.json", "manifest.json", "trajectory.svg")
    snapshots = []
    for _ in range(2):
        assert run("simulate", "--graph", "japan47", "--config", cfg, "--out", out) == 0
        sim_manifest = (out / "manifest.json").read_bytes()
        assert run("plot", "--data", out / "trajectory.csv", "--out", out) == 0
        snapshots.append([sim_manifest] + [(out / n).read_bytes() for n in names])
    assert snapshots[0] == snapshots[1]


def test_mcb_default_fixture_and_plot(tmp_path):
    out = tmp_path / "mcb"
    assert run("mcb", "--out", out) == 0
    rows = list(csv.DictReader(open(out / "mcb.csv")))
    best = min(rows, key=lambda r: float(r["avg_rank"]))
    assert best["model"] == "EGP-NHits" and float(best["avg_rank"]) == 1.0
    assert run("plot", "--mode", "mcb", "--data", out / "mcb.csv", "--out", out) == 0
    assert (out / "mcb.svg").read_text().startswith("<?xml")


def test_usage_error_exit_1(tmp_path):
    assert run("forecast", "--out", tmp_path / "u") == 1
    assert manifest(tmp_path / "u")["exit_code"] == 1
    assert run("nonsense") == 1


def test_data_error_exit_2(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("date,a,b\n2020-01,1,2\n2020-02,3\n")
    out = tmp_path / "d"
    assert run("forecast", "--mode", "baseline", "--data", bad, "--out", out) == 2
    m = manifest(out)
    assert m["status"] == "error" and m["exit_code"] == 2 and m["error"]
    assert run("simulate", "--graph", tmp_path / "missing.edges", "--out", tmp_path / "m") == 2


def test_numeric_error_exit_3(small, tmp_path):
    _, src = small
    cfg = tmp_path / "blowup.ini"
    cfg.write_text(SMALL.replace("epochs = 5", "epochs = 50\nlearning_rate = 1e3\nclip_norm = none"))
    out = tmp_path / "n"
    code = run("forecast", "--config", cfg, "--mode", "baseline", "--data", src / "Y.csv",
               "--out", out)
    assert code == 3
    assert "NonFiniteLoss" in manifest(out)["error"]


def test_calibrate_writes_summary(small, tmp_path):
    cfg, src = small
    out = tmp_path / "cal"
    assert run("calibrate", "--config", cfg, "--graph", src / "graph.edges", "--data",
               src / "Y.csv", "--out", out, "--seed", 3) == 0
    lines = (out / "posterior_summary.csv").read_text().splitlines()
    assert lines[0].split(",")[0] == "parameter" and len(lines[0].split(",")) == 10
    assert len(lines) == 1 + 6
    assert load_panel(out / "infected_fit.csv").values.shape == (6, 44)
    theta = json.loads((out / "theta_ls.json").read_text())["theta"]
    assert np.isfinite(list(theta.values())).all()
