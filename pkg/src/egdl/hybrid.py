"""Hybrid pipelines combining a mechanistic infected curve with a forecaster.

* Parallel: the forecaster sees lagged observations and lagged model
  infections side by side (two input channels, each standardized on its own).
* Series: the forecaster models the residual ``Y - I`` and its forecast is
  added to the model's future infections.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import CoverageGap, ShapeMismatch
from .forecast import (
    BlockConfig,
    BlockForecaster,
    RidgeForecaster,
    WindowSpec,
    last_windows,
    make_windows,
)
from .panel import PanelSeries

MODES = ("parallel", "series", "baseline")


@dataclass(frozen=True)
class HybridConfig:
    mode: str = "series"
    window: WindowSpec = field(default_factory=WindowSpec)
    forecaster: BlockConfig = field(default_factory=BlockConfig)
    forecaster_kind: str = "block"     # "block" or "ridge"
    ridge: float = 1e-6
    theta: dict | None = None          # parameters that produced the infected curve

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.forecaster_kind not in ("block", "ridge"):
            raise ValueError("forecaster_kind must be 'block' or 'ridge'")

    def make_forecaster(self):
        if self.forecaster_kind == "ridge":
            return RidgeForecaster(self.ridge)
        return BlockForecaster(self.forecaster)


def residual_panel(y: PanelSeries, infected: PanelSeries) -> PanelSeries:
    """Exact elementwise ``Y - I``."""
    if not y.same_shape(infected):
        raise ShapeMismatch(f"panels differ in shape: {y.values.shape} vs {infected.values.shape}")
    return y.with_values(y.values - infected.values)


@dataclass
class ForecastBundle:
    """``q``-step forecasts for every location.

    For Series runs ``point == mechanistic + residual`` exactly.
    """

    point: np.ndarray                       # (n, q)
    location_labels: tuple[str, ...]
    mode: str
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    level: float | None = None
    mechanistic: np.ndarray | None = None
    residual: np.ndarray | None = None
    manifest: dict = field(default_factory=dict)

    @property
    def q(self) -> int:
        return self.point.shape[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["location", "step", "point", "lower", "upper"])
        for x, label in enumerate(self.location_labels):
            for v in range(self.q):
                lo = "" if self.lower is None else repr(float(self.lower[x, v]))
                hi = "" if self.upper is None else repr(float(self.upper[x, v]))
                w.writerow([label, v + 1, repr(float(self.point[x, v])), lo, hi])
        return buf.getvalue()

    def save(self, directory, stem: str = "forecast") -> tuple[Path, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        csv_path = d / f"{stem}.csv"
        json_path = d / f"{stem}.json"
        csv_path.write_text(self.to_csv())
        json_path.write_text(json.dumps(self.manifest, indent=2, sort_keys=True, default=str) + "\n")
        return csv_path, json_path


def _check_coverage(y: PanelSeries, infected: PanelSeries, need: int) -> None:
    if infected.n_locations != y.n_locations:
        raise ShapeMismatch("infected panel has a different number of locations")
    if infected.T < need:
        raise CoverageGap(f"infected curve covers {infected.T} steps, {need} required")


def _manifest(config: HybridConfig, extra: dict | None = None) -> dict:
    cfg = asdict(config)
    m = {"mode": config.mode, "config": cfg, "seed": config.forecaster.seed,
         "theta": config.theta}
    if extra:
        m.update(extra)
    return m


def _fit_forecast(panel: PanelSeries, config: HybridConfig, exog: PanelSeries | None = None):
    data = make_windows(panel, config.window, exog)
    model = config.make_forecaster().fit(data)
    rows = last_windows(panel, config.window.t_w, exog)
    return model.predict(rows, np.arange(panel.n_locations)), model


def egdl_parallel(y: PanelSeries, infected: PanelSeries, config: HybridConfig) -> ForecastBundle:
    """Forecast ``Y(x, T+1..T+q)`` from lagged ``Y`` and lagged ``I``.

    Only ``I`` over the observed range ``1..T`` is used.
    """
    _check_coverage(y, infected, y.T)
    exog = PanelSeries(infected.values[:, : y.T], y.location_labels, y.time_labels)
    point, model = _fit_forecast(y, config, exog)
    return ForecastBundle(point, y.location_labels, "parallel",
                          manifest=_manifest(config, _train_info(model)))


def egdl_series(y: PanelSeries, infected: PanelSeries, config: HybridConfig) -> ForecastBundle:
    """``Y(x, T+v) = I(x, T+v) + e_hat(x, T+v)`` with ``e_hat`` forecast from ``Y - I``."""
    q = config.window.q
    _check_coverage(y, infected, y.T + q)
    past = PanelSeries(infected.values[:, : y.T], y.location_labels, y.time_labels)
    resid = residual_panel(y, past)
    e_hat, model = _fit_forecast(resid, config)
    mech = infected.values[:, y.T: y.T + q].copy()
    return ForecastBundle(mech + e_hat, y.location_labels, "series", mechanistic=mech,
                          residual=e_hat, manifest=_manifest(config, _train_info(model)))


def data_only(y: PanelSeries, config: HybridConfig) -> ForecastBundle:
    """The forecaster on ``Y`` alone (no mechanistic input)."""
    point, model = _fit_forecast(y, config)
    return ForecastBundle(point, y.location_labels, "baseline",
                          manifest=_manifest(config, _train_info(model)))


def _train_info(model) -> dict:
    hist = getattr(model, "loss_history", None)
    if hist:
        return {"final_train_loss": float(hist[-1]), "epochs": len(hist)}
    return {}


def run_pipeline(y: PanelSeries, infected: PanelSeries | None, config: HybridConfig
                 ) -> ForecastBundle:
    if config.mode == "baseline":
        return data_only(y, config)
    if infected is None:
        raise CoverageGap(f"mode {config.mode!r} needs an infected curve")
    if config.mode == "parallel":
        return egdl_parallel(y, infected, config)
    return egdl_series(y, infected, config)


def with_conformal(y: PanelSeries, infected: PanelSeries | None, config: HybridConfig,
                   level: float = 0.1,
                   runner: Callable[..., ForecastBundle] = run_pipeline) -> ForecastBundle:
    """Run the pipeline and attach split-conformal bands.

    The last ``q`` observations serve as the calibration slice: a copy of the
    pipeline trained without them forecasts them, and the absolute errors
    calibrate bands around the forecast of the model trained on all data.
    """
    from .evaluate import conformal_intervals

    q = config.window.q
    head = y.slice_time(0, y.T - q)
    calib = runner(head, infected, config)
    resid = np.abs(y.values[:, y.T - q:] - calib.point)
    bundle = runner(y, infected, config)
    band = conformal_intervals(bundle.point, resid, level)
    bundle.lower, bundle.upper, bundle.level = band.lower, band.upper, level
    bundle.manifest["conformal"] = {"level": level, "quantile": band.quantile,
                                    "calibration_size": int(resid.size)}
    return bundle
