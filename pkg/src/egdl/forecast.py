"""Windowing and global forecasters.

Two forecasters share one interface (``fit(dataset)`` / ``predict(inputs,
locations)``):

* :class:`BlockForecaster`, an NBeats-style stack of fully connected
  ReLU blocks with doubly-residual backcast/forecast outputs, trained with
  momentum SGD and hand-written backpropagation;
* :class:`RidgeForecaster`, a closed-form ridge regression per horizon step.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import NonFiniteLoss, ShapeMismatch, SingularSystem, SpecTooLarge
from .panel import PanelSeries

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowSpec:
    t_w: int = 12
    q: int = 1

    def __post_init__(self):
        if self.t_w < 1 or self.q < 1:
            raise ValueError("t_w and q must be >= 1")

    def check(self, T: int) -> None:
        if self.t_w + self.q > T:
            raise SpecTooLarge(f"t_w + q = {self.t_w + self.q} exceeds panel length {T}")


@dataclass(frozen=True)
class WindowedDataset:
    """Supervised rows cut from a panel.

    ``inputs[r]`` is ``Y(x, t-t_w+1..t)`` (followed by the same range of the
    exogenous panel when present) and ``targets[r]`` is ``Y(x, t+1..t+q)``,
    with ``x = locations[r]`` and ``t = end_times[r]`` (zero-based).
    """

    inputs: np.ndarray
    targets: np.ndarray
    locations: np.ndarray
    end_times: np.ndarray
    spec: WindowSpec
    channels: int
    source: np.ndarray                   # panel the rows were cut from, (n, T)
    exog_source: np.ndarray | None = None

    def __len__(self) -> int:
        return self.inputs.shape[0]


def make_windows(panel: PanelSeries, spec: WindowSpec, exog: PanelSeries | None = None
                 ) -> WindowedDataset:
    y = panel.values
    n, T = y.shape
    spec.check(T)
    if exog is not None:
        if exog.n_locations != n or exog.T < T:
            raise ShapeMismatch(f"exogenous panel {exog.values.shape} does not cover {y.shape}")
        if exog.location_labels != panel.location_labels:
            raise ShapeMismatch("exogenous panel has different location labels")
    t_w, q = spec.t_w, spec.q
    ends = np.arange(t_w - 1, T - q)
    rows_in, rows_out, locs, times = [], [], [], []
    for x in range(n):
        for t in ends:
            row = y[x, t - t_w + 1: t + 1]
            if exog is not None:
                row = np.concatenate([row, exog.values[x, t - t_w + 1: t + 1]])
            rows_in.append(row)
            rows_out.append(y[x, t + 1: t + 1 + q])
            locs.append(x)
            times.append(t)
    dim = t_w * (2 if exog is not None else 1)
    return WindowedDataset(
        inputs=np.array(rows_in).reshape(-1, dim),
        targets=np.array(rows_out).reshape(-1, q),
        locations=np.array(locs, dtype=np.int64),
        end_times=np.array(times, dtype=np.int64),
        spec=spec,
        channels=2 if exog is not None else 1,
        source=y.copy(),
        exog_source=None if exog is None else exog.values[:, :T].copy(),
    )


def last_windows(panel: PanelSeries, t_w: int, exog: PanelSeries | None = None,
                 end: int | None = None) -> np.ndarray:
    """One input row per location ending at time position ``end`` (default: last)."""
    end = panel.T - 1 if end is None else end
    if end - t_w + 1 < 0:
        raise SpecTooLarge("not enough history for one input window")
    rows = panel.values[:, end - t_w + 1: end + 1]
    if exog is not None:
        rows = np.concatenate([rows, exog.values[:, end - t_w + 1: end + 1]], axis=1)
    return rows.copy()


# ---------------------------------------------------------------- scaling

@dataclass(frozen=True)
class ScalingSpec:
    """Per-location affine map ``(y - center) / scale``."""

    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "ScalingSpec":
        v = np.asarray(values, dtype=float)
        center = v.mean(axis=1)
        scale = v.std(axis=1)
        flat = scale <= 1e-12 * np.maximum(1.0, np.abs(center))
        scale = np.where(flat, 1.0, scale)
        return cls(center, scale)

    @classmethod
    def identity(cls, n: int) -> "ScalingSpec":
        return cls(np.zeros(n), np.ones(n))

    def transform(self, values, locations) -> np.ndarray:
        loc = np.asarray(locations)
        return (np.asarray(values, dtype=float) - self.center[loc, None]) / self.scale[loc, None]

    def inverse(self, values, locations) -> np.ndarray:
        loc = np.asarray(locations)
        return np.asarray(values, dtype=float) * self.scale[loc, None] + self.center[loc, None]


# ---------------------------------------------------------------- block network

@dataclass(frozen=True)
class BlockConfig:
    blocks: int = 3
    hidden: tuple[int, ...] = (64, 64)
    epochs: int = 200
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int | None = None   # None: whole dataset when small, else 32
    seed: int = 0
    exog_init: str = "random"       # "zero": exogenous input weights start at 0
    clip_norm: float | None = 10.0

    def __post_init__(self):
        if self.blocks < 1 or self.epochs < 0 or not self.hidden or min(self.hidden) < 1:
            raise ValueError("blocks, hidden widths must be positive and epochs >= 0")
        if not self.learning_rate > 0 or not 0 <= self.momentum < 1:
            raise ValueError("learning_rate must be > 0 and momentum in [0, 1)")
        if self.exog_init not in ("random", "zero"):
            raise ValueError("exog_init must be 'random' or 'zero'")


SMALL_DATASET = 256


class BlockNetwork:
    """Weights and forward/backward passes in normalized space.

    Each block holds hidden layers ``(W, b)`` followed by a backcast head and
    a forecast head; both heads start at zero.
    """

    def __init__(self, input_dim: int, horizon: int, blocks: int, hidden: Sequence[int],
                 rng: np.random.Generator, endo_dim: int | None = None,
                 zero_exog: bool = False):
        self.input_dim = input_dim
        self.horizon = horizon
        self.params: list[np.ndarray] = []
        endo_dim = input_dim if endo_dim is None else endo_dim
        for _ in range(blocks):
            prev = input_dim
            for li, width in enumerate(hidden):
                if li == 0 and endo_dim < input_dim:
                    fan = endo_dim if zero_exog else input_dim
                    w_endo = rng.normal(0.0, math.sqrt(2.0 / fan), size=(width, endo_dim))
                    if zero_exog:
                        w_exo = np.zeros((width, input_dim - endo_dim))
                    else:
                        w_exo = rng.normal(0.0, math.sqrt(2.0 / fan),
                                           size=(width, input_dim - endo_dim))
                    w = np.concatenate([w_endo, w_exo], axis=1)
                else:
                    w = rng.normal(0.0, math.sqrt(2.0 / prev), size=(width, prev))
                self.params += [w, np.zeros(width)]
                prev = width
            self.params += [np.zeros((input_dim, prev)), np.zeros(input_dim)]   # backcast
            self.params += [np.zeros((horizon, prev)), np.zeros(horizon)]       # forecast
        self.blocks = blocks
        self.n_hidden = len(hidden)

    def _block_params(self, b: int):
        per = 2 * self.n_hidden + 4
        p = self.params[b * per: (b + 1) * per]
        layers = [(p[2 * k], p[2 * k + 1]) for k in range(self.n_hidden)]
        head_b = (p[-4], p[-3])
        head_f = (p[-2], p[-1])
        return layers, head_b, head_f

    def forward(self, x: np.ndarray, keep: bool = False):
        """Returns the summed forecast (and caches for backprop when ``keep``)."""
        resid = x
        total = np.zeros((x.shape[0], self.horizon))
        caches = []
        for b in range(self.blocks):
            layers, (wb, bb), (wf, bf) = self._block_params(b)
            acts = [resid]
            pre = []
            h = resid
            for w, bias in layers:
                z = h @ w.T + bias
                h = np.maximum(z, 0.0)
                pre.append(z)
                acts.append(h)
            back = h @ wb.T + bb
            fore = h @ wf.T + bf
            if keep:
                caches.append((acts, pre, back))
            resid = resid - back
            total = total + fore
        if keep:
            return total, resid, caches
        return total

    def trace(self, x: np.ndarray):
        """Per-block backcasts and forecasts plus the final residual."""
        _, resid, caches = self.forward(x, keep=True)
        backs = [c[2] for c in caches]
        fores = []
        for b in range(self.blocks):
            _, _, (wf, bf) = self._block_params(b)
            fores.append(caches[b][0][-1] @ wf.T + bf)
        return backs, fores, resid

    def loss_and_grad(self, x: np.ndarray, y: np.ndarray):
        """Mean squared error over all outputs and its gradient w.r.t. ``params``."""
        out, _, caches = self.forward(x, keep=True)
        err = out - y
        loss = float(np.mean(err ** 2))
        d_out = 2.0 * err / err.size
        grads: list[np.ndarray] = [None] * len(self.params)   # type: ignore[list-item]
        per = 2 * self.n_hidden + 4
        d_resid_next = np.zeros_like(x)
        for b in reversed(range(self.blocks)):
            layers, (wb, bb), (wf, bf) = self._block_params(b)
            acts, pre, _ = caches[b]
            h = acts[-1]
            d_back = -d_resid_next
            base = b * per
            grads[base + per - 2] = d_out.T @ h
            grads[base + per - 1] = d_out.sum(axis=0)
            grads[base + per - 4] = d_back.T @ h
            grads[base + per - 3] = d_back.sum(axis=0)
            dh = d_out @ wf + d_back @ wb
            for k in reversed(range(self.n_hidden)):
                w, _ = layers[k]
                dz = dh * (pre[k] > 0)
                grads[base + 2 * k] = dz.T @ acts[k]
                grads[base + 2 * k + 1] = dz.sum(axis=0)
                dh = dz @ w
            # resid_{b+1} = resid_b - back_b: identity path plus the block's own input
            d_resid_next = d_resid_next + dh
        return loss, grads

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean((self.forward(x) - y) ** 2))

    def shapes(self) -> list[tuple[int, ...]]:
        return [p.shape for p in self.params]


@dataclass
class BlockForecaster:
    config: BlockConfig = field(default_factory=BlockConfig)
    network: BlockNetwork | None = None
    scaling: ScalingSpec | None = None
    exog_scaling: ScalingSpec | None = None
    spec: WindowSpec | None = None
    channels: int = 1
    loss_history: list = field(default_factory=list)
    initial_loss: float = float("nan")
    name: str = "NBeats"

    # -- scaling helpers
    def _normalize_inputs(self, inputs, locations):
        t_w = self.spec.t_w
        y_part = self.scaling.transform(inputs[:, :t_w], locations)
        if self.channels == 1:
            return y_part
        x_part = self.exog_scaling.transform(inputs[:, t_w:], locations)
        return np.concatenate([y_part, x_part], axis=1)

    def fit(self, data: WindowedDataset) -> "BlockForecaster":
        trained = train_block_forecaster(data, self.config)
        self.__dict__.update({k: v for k, v in trained.__dict__.items() if k != "name"})
        return self

    def predict(self, inputs, locations) -> np.ndarray:
        return predict(self, inputs, locations)


def train_block_forecaster(data: WindowedDataset, config: BlockConfig = BlockConfig()
                           ) -> BlockForecaster:
    """Fit the block network by momentum SGD on normalized windows.

    Scaling is fitted per location on ``data.source`` (the training panel).
    Raises :class:`NonFiniteLoss` when training diverges.
    """
    if len(data) == 0:
        raise ValueError("training set is empty")
    spec = data.spec
    scaling = ScalingSpec.fit(data.source)
    exog_scaling = ScalingSpec.fit(data.exog_source) if data.channels == 2 else None
    model = BlockForecaster(config=config, scaling=scaling, exog_scaling=exog_scaling,
                            spec=spec, channels=data.channels)
    x = model._normalize_inputs(data.inputs, data.locations)
    y = scaling.transform(data.targets, data.locations)
    rng = np.random.default_rng(config.seed)
    net = BlockNetwork(x.shape[1], spec.q, config.blocks, config.hidden, rng,
                       endo_dim=spec.t_w, zero_exog=config.exog_init == "zero")
    model.network = net
    n = x.shape[0]
    bs = config.batch_size or (n if n <= SMALL_DATASET else 32)
    model.initial_loss = net.loss(x, y)
    with np.errstate(over="ignore", invalid="ignore"):
        # divergence surfaces as NonFiniteLoss rather than numpy warnings
        model.loss_history = _sgd(net, x, y, config, rng, bs)
    return model


def _sgd(net: BlockNetwork, x, y, config: BlockConfig, rng, bs: int) -> list:
    n = x.shape[0]
    velocity = [np.zeros_like(p) for p in net.params]
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(n) if bs < n else np.arange(n)
        for start in range(0, n, bs):
            idx = order[start: start + bs]
            loss, grads = net.loss_and_grad(x[idx], y[idx])
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"loss became non-finite in epoch {epoch}")
            if config.clip_norm is not None:
                norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
                if norm > config.clip_norm:
                    grads = [g * (config.clip_norm / norm) for g in grads]
            for p, v, g in zip(net.params, velocity, grads):
                v *= config.momentum
                v -= config.learning_rate * g
                p += v
        epoch_loss = net.loss(x, y)
        if not math.isfinite(epoch_loss):
            raise NonFiniteLoss(f"loss became non-finite after epoch {epoch}")
        history.append(epoch_loss)
    return history


def predict(model: BlockForecaster, inputs, locations) -> np.ndarray:
    """Forecast rows in original units; ``locations`` selects each row's scaling."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    expected = model.spec.t_w * model.channels
    if inputs.shape[1] != expected:
        raise ShapeMismatch(f"input rows have length {inputs.shape[1]}, model expects {expected}")
    locations = np.broadcast_to(np.asarray(locations, dtype=np.int64), (inputs.shape[0],))
    z = model._normalize_inputs(inputs, locations)
    return model.scaling.inverse(model.network.forward(z), locations)


def save_model(model: BlockForecaster, path) -> None:
    """Text format: one JSON header line, then one line per weight array
    (row-major, comma separated) in ``header["shapes"]`` order."""
    header = {
        "format": "egdl-block-forecaster/1",
        "config": asdict(model.config),
        "t_w": model.spec.t_w,
        "q": model.spec.q,
        "channels": model.channels,
        "shapes": [list(s) for s in model.network.shapes()],
        "scaling": [model.scaling.center.tolist(), model.scaling.scale.tolist()],
        "exog_scaling": None if model.exog_scaling is None else
        [model.exog_scaling.center.tolist(), model.exog_scaling.scale.tolist()],
    }
    lines = [json.dumps(header)]
    for p in model.network.params:
        lines.append(",".join(repr(float(v)) for v in p.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> BlockForecaster:
    text = Path(path).read_text().splitlines()
    header = json.loads(text[0])
    cfg = header["config"]
    cfg["hidden"] = tuple(cfg["hidden"])
    config = BlockConfig(**cfg)
    spec = WindowSpec(header["t_w"], header["q"])
    dim = spec.t_w * header["channels"]
    net = BlockNetwork(dim, spec.q, config.blocks, config.hidden, np.random.default_rng(0))
    params = []
    for shape, line in zip(header["shapes"], text[1:]):
        vals = np.array([float(v) for v in line.split(",")]) if line else np.zeros(0)
        params.append(vals.reshape(shape))
    net.params = params
    sc = header["scaling"]
    ex = header["exog_scaling"]
    return BlockForecaster(
        config=config, network=net, spec=spec, channels=header["channels"],
        scaling=ScalingSpec(np.array(sc[0]), np.array(sc[1])),
        exog_scaling=None if ex is None else ScalingSpec(np.array(ex[0]), np.array(ex[1])),
    )


# ---------------------------------------------------------------- ridge baseline

@dataclass
class LinearModel:
    weights: np.ndarray      # (q, input_dim)
    intercept: np.ndarray    # (q,)
    name: str = "Ridge"

    def predict(self, inputs, locations=None) -> np.ndarray:
        return np.atleast_2d(np.asarray(inputs, dtype=float)) @ self.weights.T + self.intercept


def fit_linear_baseline(data: WindowedDataset, ridge: float = 0.0) -> LinearModel:
    """Closed-form ridge regression per horizon step, unpenalized intercept."""
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    if len(data) == 0:
        raise ValueError("training set is empty")
    x = data.inputs
    y = data.targets
    xm = x.mean(axis=0)
    ym = y.mean(axis=0)
    xc = x - xm
    yc = y - ym
    gram = xc.T @ xc
    if ridge == 0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise SingularSystem("inputs are collinear; use ridge > 0")
    a = gram + ridge * np.eye(gram.shape[0])
    w = np.linalg.solve(a, xc.T @ yc).T
    return LinearModel(w, ym - w @ xm)


@dataclass
class RidgeForecaster:
    ridge: float = 1e-6
    model: LinearModel | None = None
    name: str = "Ridge"

    def fit(self, data: WindowedDataset) -> "RidgeForecaster":
        self.model = fit_linear_baseline(data, self.ridge)
        return self

    def predict(self, inputs, locations=None) -> np.ndarray:
        return self.model.predict(inputs)


class Forecaster(Protocol):
    name: str

    def fit(self, data: WindowedDataset) -> "Forecaster": ...

    def predict(self, inputs, locations) -> np.ndarray: ...
