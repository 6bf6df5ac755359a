"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every command writes ``manifest.json`` to the output directory, also on failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .errors import (
    DataError,
    EgdlError,
    GraphError,
    LengthMismatch,
    NumericError,
    ParseError,
    ShapeMismatch,
)

log = logging.getLogger("egdl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
FIXTURES = ("japan47", "china31")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI run configuration")
    common.add_argument("--graph", metavar="PATH", help="edge-list file or fixture name")
    common.add_argument("--data", metavar="PATH", help="input CSV")
    common.add_argument("--out", metavar="DIR", default=None, help="output directory")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--horizon", type=int, default=None)
    common.add_argument("--mode", default=None)
    common.add_argument("--level", type=float, default=None,
                        help="miscoverage a for conformal bands / MCB test")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="egdl", description="Networked SIR simulation, calibration and hybrid forecasting")
    p.add_argument("--version", action="version", version=f"egdl {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="integrate the network model")
    sub.add_parser("calibrate", parents=[common], help="least squares + MCMC calibration")
    fc = sub.add_parser("forecast", parents=[common], help="hybrid or data-only forecast")
    fc.add_argument("--infected", metavar="PATH", help="model infected curve CSV")
    ev = sub.add_parser("evaluate", parents=[common], help="score forecasts or run a backtest")
    ev.add_argument("--forecasts", nargs="*", metavar="CSV", default=None)
    ev.add_argument("--infected", metavar="PATH")
    sub.add_parser("mcb", parents=[common], help="multiple comparisons with the best")
    sub.add_parser("synth", parents=[common], help="generate a synthetic panel")
    pl = sub.add_parser("plot", parents=[common], help="render SVG figures")
    pl.add_argument("--panel", metavar="PATH", help="observed panel for forecast plots")
    pl.add_argument("--location", default=None)
    return p


# ---------------------------------------------------------------- helpers

def _versions() -> dict:
    import matplotlib
    import numba
    import scipy
    return {"egdl": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__,
            "matplotlib": matplotlib.__version__}


def _load_graph(ref):
    from .graph import load_edge_list, load_fixture
    if ref is None:
        raise UsageError("--graph is required")
    if not Path(ref).exists() and ref in FIXTURES:
        return load_fixture(ref)
    return load_edge_list(ref)


def _need(value, flag):
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


def _write(ctx, name: str, text: str) -> Path:
    path = ctx["out"] / name
    path.write_text(text)
    ctx["outputs"].append(name)
    return path


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n"


# ---------------------------------------------------------------- commands

def cmd_simulate(args, cfg: RunConfig, ctx):
    from .mnsir import equilibria, integrate, point_source_state
    graph = _load_graph(args.graph or cfg.get("run", "graph"))
    params = cfg.model_params()
    source = cfg.getint("model", "source", 19 if graph.n > 19 else 0)
    state = point_source_state(graph.n, source, cfg.getfloat("model", "population", 1000.0),
                               cfg.getfloat("model", "infected0", 10.0))
    t_end = cfg.getfloat("model", "t_end", 2000.0)
    dt = cfg.getfloat("model", "dt", 0.1)
    every = max(1, int(round(cfg.getfloat("model", "record_every", 1.0) / dt)))
    traj = integrate(state, params, graph, t_end, dt, save_every=every)
    _write(ctx, "trajectory.csv", traj.to_csv())
    eq = equilibria(params)
    target = eq.endemic or eq.dfe
    final = traj.final
    report = {
        "params": params.as_dict(), "r0": eq.r0, "classification": eq.classification,
        "dfe": eq.dfe, "endemic": eq.endemic, "source": source, "t_end": t_end, "dt": dt,
        "final_max_abs_dev": {"S": float(np.max(np.abs(final.s - target[0]))),
                              "I": float(np.max(np.abs(final.i - target[1])))},
    }
    _write(ctx, "equilibria.json", _dump(report))


def cmd_calibrate(args, cfg: RunConfig, ctx):
    from .calibrate import (PARAM_NAMES, McmcConfig, ObservedData, PriorSpec, Simulator,
                            mcmc_sample, nls_fit, summarize)
    from .panel import PanelSeries, load_panel
    graph = _load_graph(args.graph or cfg.get("run", "graph"))
    panel = load_panel(_need(args.data or cfg.get("run", "data"), "--data"))
    lam = cfg.getfloat("calibrate", "lam", 10.0)
    data = ObservedData.from_population(panel, cfg.getfloat("calibrate", "population", 1000.0), lam)
    guess = {"alpha": 0.5, "beta": 1e-4, "gamma": 0.25, "sigma": 0.75, "mu": 0.01}
    guess = {k: cfg.getfloat("calibrate", k, v) for k, v in guess.items()}
    nls = nls_fit(data, graph, guess)
    _write(ctx, "theta_ls.json", _dump({"theta": nls.theta, "sse": nls.sse,
                                        "initial_sse": nls.initial_sse, "improved": nls.improved}))
    priors = PriorSpec.centered_on(nls.theta)
    mc = McmcConfig(chains=cfg.getint("calibrate", "chains", 2),
                    warmup=cfg.getint("calibrate", "warmup", 1000),
                    draws=cfg.getint("calibrate", "draws", 2000), seed=ctx["seed"])
    chains = mcmc_sample(data, graph, priors, mc)
    summary = summarize(chains, cfg.getfloat("calibrate", "hdi_mass", 0.94))
    _write(ctx, "posterior_summary.csv", summary.to_csv())
    _write(ctx, "posterior_draws.csv", chains.to_csv())
    mean = chains.posterior_mean()
    horizon = args.horizon or cfg.getint("window", "q", 12)
    _, infected = Simulator(data, graph).run({k: mean[k] for k in PARAM_NAMES},
                                             panel.T + horizon)
    times = list(panel.time_labels) + [f"+{v}" for v in range(1, horizon + 1)]
    from .panel import panel_to_csv
    _write(ctx, "infected_fit.csv", panel_to_csv(PanelSeries(infected, panel.location_labels, times)))
    ctx["extra"]["posterior_mean"] = mean


def _hybrid_config(args, cfg: RunConfig, ctx, mode: str, q: int):
    from .forecast import WindowSpec
    from .hybrid import HybridConfig
    return HybridConfig(mode=mode, window=WindowSpec(cfg.getint("window", "t_w", 12), q),
                        forecaster=cfg.block_config(ctx["seed"]),
                        forecaster_kind=cfg.get("forecaster", "kind", "block"),
                        ridge=cfg.getfloat("forecaster", "ridge", 1e-6))


def cmd_forecast(args, cfg: RunConfig, ctx):
    from .hybrid import MODES, run_pipeline, with_conformal
    from .panel import load_panel
    mode = args.mode or "series"
    if mode not in MODES:
        raise UsageError(f"--mode must be one of {', '.join(MODES)}")
    y = load_panel(_need(args.data or cfg.get("run", "data"), "--data"))
    infected_path = args.infected or cfg.get("run", "infected")
    infected = load_panel(infected_path) if infected_path else None
    if mode != "baseline" and infected is None:
        raise UsageError(f"--mode {mode} needs --infected")
    q = args.horizon or cfg.getint("window", "q", 12)
    hc = _hybrid_config(args, cfg, ctx, mode, q)
    level = args.level if args.level is not None else cfg.getfloat("conformal", "level", None)
    if level is not None:
        bundle = with_conformal(y, infected, hc, level)
    else:
        bundle = run_pipeline(y, infected, hc)
    _write(ctx, "forecast.csv", bundle.to_csv())
    _write(ctx, "forecast.json", _dump(bundle.manifest))


def _read_forecast_csv(path, labels, q):
    point = np.full((len(labels), q), np.nan)
    index = {lab: k for k, lab in enumerate(labels)}
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for lineno, row in enumerate(rows, start=2):
        try:
            x = index[row["location"]]
            v = int(row["step"]) - 1
            point[x, v] = float(row["point"])
        except (KeyError, ValueError, IndexError) as exc:
            raise ParseError(f"bad forecast row in {path}: {exc}", lineno) from None
    if np.isnan(point).any():
        raise ParseError(f"{path} does not cover every location and step 1..{q}")
    return point


def cmd_evaluate(args, cfg: RunConfig, ctx):
    from .evaluate import (HybridModel, MechanisticOnly, MetricReport, NaivePersistence,
                           _safe_metrics, rolling_backtest)
    from .panel import load_panel
    panel = load_panel(_need(args.data or cfg.get("run", "data"), "--data"))
    if args.forecasts:
        q = args.horizon or cfg.getint("window", "q", 12)
        if panel.T <= q + 1:
            raise UsageError("panel must hold history plus the forecast horizon")
        history = panel.values[:, : panel.T - q]
        actual = panel.values[:, panel.T - q:]
        report = MetricReport()
        stems = [Path(p).stem for p in args.forecasts]
        for path, stem in zip(args.forecasts, stems):
            # files sharing a stem (e.g. two forecast.csv) are told apart by directory
            name = stem if stems.count(stem) == 1 else f"{Path(path).parent.name}-{stem}"
            point = _read_forecast_csv(path, panel.location_labels, q)
            report.forecasts[(name, q)] = point
            for x, label in enumerate(panel.location_labels):
                report.records.append((name, q, label, *_safe_metrics(actual[x], point[x], history[x])))
    else:
        infected_path = args.infected or cfg.get("run", "infected")
        models = [NaivePersistence()]
        t_w = cfg.getint("window", "t_w", 12)
        horizons = (args.horizon,) if args.horizon else cfg.horizons()
        for mode in ("baseline",) + (("series", "parallel") if infected_path else ()):
            hc = _hybrid_config(args, cfg, ctx, mode, max(horizons))
            models.append(HybridModel(hc, load_panel(infected_path) if infected_path else None))
        if infected_path:
            models.insert(1, MechanisticOnly(load_panel(infected_path)))
        report = rolling_backtest(panel, models, horizons, t_w)
    _write(ctx, "report.csv", report.to_csv())
    _write(ctx, "report_detail.csv", report.detail_csv())


def load_metric_matrix(path) -> tuple[list[str], list[str], np.ndarray]:
    """CSV with header ``series,<model>,...``; returns (models, series, k x N matrix)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ParseError(f"{path}: needs a header and at least one row")
    models = rows[0][1:]
    series, vals = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(models) + 1:
            raise ParseError(f"expected {len(models) + 1} fields, got {len(row)}", lineno)
        series.append(row[0])
        try:
            vals.append([float(v) for v in row[1:]])
        except ValueError:
            raise ParseError("non-numeric metric value", lineno) from None
    return models, series, np.array(vals).T


def cmd_mcb(args, cfg: RunConfig, ctx):
    from importlib import resources

    from .evaluate import mcb_test
    path = args.data or cfg.get("run", "data")
    if path is None:
        path = resources.files("egdl").joinpath("data").joinpath("mcb_smape_fixture.csv")
    models, _, matrix = load_metric_matrix(path)
    level = args.level if args.level is not None else 0.05
    res = mcb_test(matrix, models, level)
    _write(ctx, "mcb.csv", res.to_csv())


def cmd_synth(args, cfg: RunConfig, ctx):
    from .graph import random_connected_graph, save_edge_list
    from .panel import save_panel
    from .synth import DEFAULT_SYNTH_PARAMS, SyntheticSpec, generate_synthetic
    n = cfg.getint("synth", "n", 20)
    T = cfg.getint("synth", "T", 120)
    q = args.horizon or cfg.getint("window", "q", 12)
    seed = ctx["seed"]
    ref = args.graph or cfg.get("run", "graph")
    graph = _load_graph(ref) if ref else random_connected_graph(
        n, cfg.getint("synth", "extra_edges", n // 2), seed=seed)
    n = graph.n
    base = DEFAULT_SYNTH_PARAMS.as_dict()
    params = DEFAULT_SYNTH_PARAMS.with_(**{k: cfg.getfloat("synth", k, v) for k, v in base.items()})
    d = SyntheticSpec()
    spec = SyntheticSpec(
        n=n, T=T + q, params=params, period=cfg.getint("synth", "period", d.period),
        ar=cfg.getfloat("synth", "ar", d.ar), sd=cfg.getfloat("synth", "sd", d.sd),
        seasonal_amplitude=cfg.getfloat("synth", "seasonal_amplitude", d.seasonal_amplitude),
        seed=seed, n_sources=cfg.getint("synth", "n_sources", min(d.n_sources, n)),
        initial_infected=cfg.getfloat("synth", "initial_infected", d.initial_infected))
    y, infected = generate_synthetic(spec, graph)
    save_panel(y.slice_time(0, T), ctx["out"] / "Y.csv")
    save_panel(infected, ctx["out"] / "infected.csv")
    save_panel(y, ctx["out"] / "Y_full.csv")
    save_edge_list(graph, ctx["out"] / "graph.edges")
    ctx["outputs"] += ["Y.csv", "infected.csv", "Y_full.csv", "graph.edges"]
    ctx["extra"]["synth"] = {"n": n, "T": T, "q": q, "params": params.as_dict()}


def cmd_plot(args, cfg: RunConfig, ctx):
    from . import plots
    kind = args.mode or "trajectory"
    path = _need(args.data, "--data")
    if kind == "trajectory":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        nodes = list(dict.fromkeys(r["node"] for r in rows))
        times = np.array(sorted({float(r["t"]) for r in rows}))
        infected = np.array([float(r["I"]) for r in rows]).reshape(times.size, len(nodes))
        hi = [nodes.index(args.location)] if args.location in nodes else [int(np.argmax(infected.max(0)))]
        plots.plot_trajectories(times, infected, ctx["out"] / "trajectory.svg", nodes, hi)
        ctx["outputs"].append("trajectory.svg")
    elif kind == "forecast":
        from .panel import load_panel
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        loc = args.location or rows[0]["location"]
        mine = [r for r in rows if r["location"] == loc]
        if not mine:
            raise ParseError(f"location {loc!r} not in {path}")
        point = np.array([float(r["point"]) for r in mine])
        lower = upper = None
        if mine[0]["lower"]:
            lower = np.array([float(r["lower"]) for r in mine])
            upper = np.array([float(r["upper"]) for r in mine])
        history, actual = np.zeros(0), None
        if args.panel:
            panel = load_panel(args.panel)
            row = panel.values[panel.location_labels.index(loc)]
            q = point.size
            history, actual = (row[:-q], row[-q:]) if row.size > q else (row, None)
        plots.plot_forecast(history, actual, point, ctx["out"] / "forecast.svg", lower, upper, loc)
        ctx["outputs"].append("forecast.svg")
    elif kind == "mcb":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        names = [r["model"] for r in rows]
        ranks = np.array([float(r["avg_rank"]) for r in rows])
        cd = float(rows[0]["cd"])
        plots.plot_mcb(names, ranks, cd, int(np.argmin(ranks)), ctx["out"] / "mcb.svg")
        ctx["outputs"].append("mcb.svg")
    else:
        raise UsageError("plot --mode must be trajectory, forecast or mcb")


COMMANDS = {
    "simulate": cmd_simulate, "calibrate": cmd_calibrate, "forecast": cmd_forecast,
    "evaluate": cmd_evaluate, "mcb": cmd_mcb, "synth": cmd_synth, "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out or "egdl-out")
    ctx = {"out": out, "outputs": [], "extra": {}, "seed": 0}
    code, error = EXIT_OK, None
    cfg = RunConfig()
    try:
        out.mkdir(parents=True, exist_ok=True)
        cfg = RunConfig.load(args.config)
        for key in ("graph", "data"):
            cfg.set("run", key, getattr(args, key))
        cfg.set("run", "seed", args.seed)
        cfg.set("window", "q", args.horizon)
        ctx["seed"] = cfg.getint("run", "seed", 0)
        COMMANDS[args.command](args, cfg, ctx)
    except UsageError as exc:
        code, error = EXIT_USAGE, str(exc)
    except NumericError as exc:
        code, error = EXIT_NUMERIC, f"{type(exc).__name__}: {exc}"
    except (DataError, ParseError, GraphError, ShapeMismatch, LengthMismatch,
            FileNotFoundError, IsADirectoryError, EgdlError, ValueError) as exc:
        code, error = EXIT_DATA, f"{type(exc).__name__}: {exc}"
    manifest = {
        "command": args.command, "status": "ok" if code == 0 else "error", "exit_code": code,
        "error": error, "seed": ctx["seed"], "config_hash": cfg.hash(),
        "config": cfg.sections, "outputs": ctx["outputs"], "versions": _versions(),
        **ctx["extra"],
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(_dump(manifest))
    except OSError as exc:
        print(f"egdl: could not write manifest: {exc}", file=sys.stderr)
    if error:
        print(f"egdl {args.command}: {error}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
