"""Forecast metrics, rolling backtests, conformal bands and the MCB rank test."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import CalibrationTooSmall, InsufficientHistory, ShapeError, ZeroDenominator
from .forecast import WindowSpec
from .hybrid import HybridConfig, data_only, egdl_parallel, egdl_series
from .panel import PanelSeries

log = logging.getLogger(__name__)

METRICS = ("smape", "mae", "mase", "rmse")


# ---------------------------------------------------------------- metrics

def smape(actual, forecast) -> float:
    a = np.asarray(actual, dtype=float)
    f = np.asarray(forecast, dtype=float)
    num = 2.0 * np.abs(f - a)
    den = np.abs(f) + np.abs(a)
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(100.0 * terms.mean())


def mase_scale(history) -> float:
    h = np.asarray(history, dtype=float)
    if h.size < 2:
        raise ZeroDenominator("MASE needs at least two history points")
    return float(np.abs(np.diff(h)).sum() / (h.size - 1))


def metrics(actual, forecast, history) -> tuple[float, float, float, float]:
    """``(smape, mae, mase, rmse)`` for one location.

    SMAPE is in percent with 0/0 terms counted as 0. MASE divides the summed
    absolute error by ``q`` times the mean absolute one-step change of
    ``history``.
    """
    a = np.asarray(actual, dtype=float).ravel()
    f = np.asarray(forecast, dtype=float).ravel()
    if a.shape != f.shape or a.size == 0:
        raise ShapeError(f"actual {a.shape} and forecast {f.shape} must be equal and nonempty")
    err = f - a
    q = a.size
    mae = float(np.abs(err).mean())
    rmse = float(math.sqrt(np.mean(err ** 2)))
    scale = mase_scale(history)
    if scale == 0:
        raise ZeroDenominator("history is constant; MASE is undefined")
    mase = float(np.abs(err).sum() / (q * scale))
    return smape(a, f), mae, mase, rmse


def _safe_metrics(actual, forecast, history):
    try:
        return metrics(actual, forecast, history)
    except ZeroDenominator:
        # constant history: a perfect forecast scores 0, anything else is undefined
        a = np.asarray(actual, dtype=float)
        f = np.asarray(forecast, dtype=float)
        err = f - a
        mase = 0.0 if np.all(err == 0) else float("nan")
        if mase != 0.0:
            log.warning("MASE undefined for a constant history; recorded as NaN")
        return smape(a, f), float(np.abs(err).mean()), mase, float(math.sqrt(np.mean(err ** 2)))


# ---------------------------------------------------------------- backtest

class BacktestModel(Protocol):
    name: str

    def forecast(self, train: PanelSeries, q: int) -> np.ndarray: ...


@dataclass
class NaivePersistence:
    name: str = "Naive"

    def forecast(self, train: PanelSeries, q: int) -> np.ndarray:
        return np.repeat(train.values[:, -1:], q, axis=1)


@dataclass
class MechanisticOnly:
    """Forecast = the model's infected curve over the test steps."""

    infected: PanelSeries
    name: str = "MN-SIR"

    def forecast(self, train: PanelSeries, q: int) -> np.ndarray:
        T = train.T
        if self.infected.T < T + q:
            from .errors import CoverageGap
            raise CoverageGap(f"infected curve covers {self.infected.T} steps, {T + q} required")
        return self.infected.values[:, T: T + q].copy()


@dataclass
class HybridModel:
    """Series, Parallel or data-only pipeline refitted per horizon."""

    config: HybridConfig
    infected: PanelSeries | None = None
    name: str = ""

    def __post_init__(self):
        if not self.name:
            self.name = {"series": "EGDL-Series", "parallel": "EGDL-Parallel",
                         "baseline": "Forecaster"}[self.config.mode]

    def forecast(self, train: PanelSeries, q: int) -> np.ndarray:
        cfg = replace(self.config, window=WindowSpec(self.config.window.t_w, q))
        if cfg.mode == "baseline":
            return data_only(train, cfg).point
        if cfg.mode == "parallel":
            return egdl_parallel(train, self.infected, cfg).point
        return egdl_series(train, self.infected, cfg).point


@dataclass
class MetricReport:
    """Per-location scores plus across-location mean and population sd."""

    records: list = field(default_factory=list)   # (model, horizon, location, smape, mae, mase, rmse)
    forecasts: dict = field(default_factory=dict)  # (model, horizon) -> (n, q)

    def values(self, model: str, horizon: int, metric: str) -> np.ndarray:
        k = 3 + METRICS.index(metric)
        return np.array([r[k] for r in self.records if r[0] == model and r[1] == horizon])

    def models(self) -> list[str]:
        return list(dict.fromkeys(r[0] for r in self.records))

    def horizons(self) -> list[int]:
        return list(dict.fromkeys(r[1] for r in self.records))

    def aggregate(self) -> list[tuple]:
        rows = []
        for m in self.models():
            for h in self.horizons():
                for metric in METRICS:
                    v = self.values(m, h, metric)
                    if v.size:
                        rows.append((m, h, metric, float(v.mean()), float(v.std())))
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "horizon", "metric", "mean", "sd"])
        for m, h, metric, mean, sd in self.aggregate():
            w.writerow([m, h, metric, f"{mean:.6f}", f"{sd:.6f}"])
        return buf.getvalue()

    def detail_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "horizon", "location", *METRICS])
        for r in self.records:
            w.writerow([r[0], r[1], r[2], *(repr(float(v)) for v in r[3:])])
        return buf.getvalue()

    def metric_matrix(self, horizon: int, metric: str = "smape",
                      models: Sequence[str] | None = None) -> np.ndarray:
        models = list(models) if models is not None else self.models()
        return np.array([self.values(m, horizon, metric) for m in models])


def rolling_backtest(panel: PanelSeries, models: Sequence[BacktestModel],
                     horizons: Sequence[int] = (3, 6, 9, 12), t_w: int = 12) -> MetricReport:
    """Hold out the last ``q`` steps for each horizon, fit on the rest, score."""
    if not models:
        raise ValueError("at least one model is required")
    report = MetricReport()
    for q in horizons:
        if panel.T - q < t_w + q:
            raise InsufficientHistory(
                f"horizon {q} with window {t_w} needs T >= {t_w + 2 * q}, panel has {panel.T}")
        train = panel.slice_time(0, panel.T - q)
        test = panel.values[:, panel.T - q:]
        for model in models:
            pred = np.asarray(model.forecast(train, q), dtype=float)
            if pred.shape != test.shape:
                raise ShapeError(f"{model.name} returned {pred.shape}, expected {test.shape}")
            report.forecasts[(model.name, q)] = pred
            for x, label in enumerate(panel.location_labels):
                vals = _safe_metrics(test[x], pred[x], train.values[x])
                report.records.append((model.name, q, label, *vals))
    return report


# ---------------------------------------------------------------- conformal

@dataclass(frozen=True)
class ConformalBand:
    lower: np.ndarray
    upper: np.ndarray
    level: float          # miscoverage a; nominal coverage is 1 - a
    quantile: float
    scale: np.ndarray     # per location

    @property
    def coverage(self) -> float:
        return 1.0 - self.level


def conformal_quantile(scores, a: float) -> float:
    """The ``ceil((m + 1)(1 - a))``-th smallest score."""
    s = np.sort(np.asarray(scores, dtype=float).ravel())
    m = s.size
    if not 0 < a < 1:
        raise ValueError("level must lie in (0, 1)")
    k = math.ceil((m + 1) * (1 - a) - 1e-9)
    if m == 0 or k > m:
        need = math.ceil(1.0 / a - 1.0 - 1e-9)
        raise CalibrationTooSmall(f"{m} calibration scores, need at least {need}")
    return float(s[k - 1])


def conformal_intervals(point_forecasts, calibration_residuals, level: float = 0.1
                        ) -> ConformalBand:
    """Split-conformal band ``point +/- quantile * scale(x)``.

    ``calibration_residuals`` has one row per location; its absolute values
    define ``scale(x)`` (their mean, floored at 1e-9) and, divided by it, the
    pooled scores.
    """
    point = np.asarray(point_forecasts, dtype=float)
    squeeze = point.ndim == 1
    if squeeze:
        point = point[:, None]
    res = np.abs(np.asarray(calibration_residuals, dtype=float))
    if res.ndim == 1:
        res = res[:, None]
    if res.shape[0] != point.shape[0]:
        raise ShapeError("calibration residuals need one row per location")
    scale = np.maximum(res.mean(axis=1), 1e-9)
    scores = res / scale[:, None]
    qv = conformal_quantile(scores, level)
    half = qv * scale[:, None]
    lower, upper = point - half, point + half
    if squeeze:
        lower, upper = lower[:, 0], upper[:, 0]
    return ConformalBand(lower, upper, level, qv, scale)


# ---------------------------------------------------------------- MCB

# Two-sided Tukey critical values divided by sqrt(2), q_{a,k} for k = 2..20
# (studentized range with infinite degrees of freedom).
MCB_CRITICAL = {
    0.05: (1.959964, 2.343701, 2.569032, 2.727774, 2.849705, 2.948320, 3.030878, 3.101730,
           3.163684, 3.218654, 3.268004, 3.312739, 3.353618, 3.391230, 3.426041, 3.458425,
           3.488685, 3.517073, 3.543799),
    0.10: (1.644854, 2.052293, 2.291341, 2.459516, 2.588521, 2.692732, 2.779884, 2.854606,
           2.919889, 2.977768, 3.029694, 3.076733, 3.119693, 3.159199, 3.195743, 3.229723,
           3.261461, 3.291224, 3.319233),
}


def critical_value(k: int, a: float = 0.05) -> float:
    for key, table in MCB_CRITICAL.items():
        if abs(a - key) < 1e-12:
            if not 2 <= k <= len(table) + 1:
                raise ValueError(f"critical values are tabulated for 2 <= k <= {len(table) + 1}")
            return table[k - 2]
    raise ValueError(f"critical values are tabulated for a in {sorted(MCB_CRITICAL)}")


@dataclass(frozen=True)
class McbResult:
    names: tuple[str, ...]
    avg_rank: np.ndarray
    cd: float
    best: int
    tie_for_best: bool
    ranks: np.ndarray        # (k, N)

    @property
    def lower(self) -> np.ndarray:
        return self.avg_rank - self.cd / 2

    @property
    def upper(self) -> np.ndarray:
        return self.avg_rank + self.cd / 2

    @property
    def significant(self) -> np.ndarray:
        """True where a model's interval misses the best model's interval."""
        b = self.best
        return (self.lower > self.upper[b]) | (self.upper < self.lower[b])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "avg_rank", "cd", "significant_vs_best"])
        for name, r, s in zip(self.names, self.avg_rank, self.significant):
            w.writerow([name, f"{r:.4f}", f"{self.cd:.4f}", str(bool(s)).lower()])
        return buf.getvalue()


def mcb_test(metric_matrix, names: Sequence[str] | None = None, level: float = 0.05
             ) -> McbResult:
    """Rank ``k`` models over ``N`` series (rows = models, lower metric = better)."""
    m = np.asarray(metric_matrix, dtype=float)
    if m.ndim != 2:
        raise ShapeError("metric matrix must be 2-D (models x series)")
    k, n = m.shape
    if k < 2 or n < 2:
        raise ShapeError(f"need at least 2 models and 2 series, got {k} x {n}")
    if not np.all(np.isfinite(m)):
        raise ShapeError("metric matrix has missing or non-finite entries")
    names = tuple(names) if names is not None else tuple(f"model{i}" for i in range(k))
    if len(names) != k:
        raise ShapeError(f"{len(names)} names for {k} models")
    ranks = np.apply_along_axis(rankdata, 0, m)
    avg = ranks.mean(axis=1)
    cd = critical_value(k, level) * math.sqrt(k * (k + 1) / (12.0 * n))
    best = int(np.argmin(avg))       # first listed wins ties
    tie = bool(np.sum(avg == avg[best]) > 1)
    return McbResult(names, avg, cd, best, tie, ranks)
