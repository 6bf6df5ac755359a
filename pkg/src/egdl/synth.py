"""Synthetic panels: model infected curve plus seasonal AR(1) noise."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import SpatialGraph
from .mnsir import CompartmentState, MnSirParams, infected_curve, integrate
from .panel import PanelSeries

# Slow outbreak: the wave is still moving at t = 120, so recent model
# infections carry information about the next year.
DEFAULT_SYNTH_PARAMS = MnSirParams(lam=10.0, mu=0.01, beta=2e-4, gamma=0.05, alpha=0.01, sigma=0.01)


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings.

    Noise at location x is ``A sin(2 pi t / period + phase_x) + u_t`` with
    ``u_t = ar * u_{t-1} + N(0, sd^2)`` started from its stationary law;
    ``phase_x`` is drawn uniformly per location.
    """

    n: int = 20
    T: int = 120
    params: MnSirParams = field(default_factory=lambda: DEFAULT_SYNTH_PARAMS)
    period: int = 12
    ar: float = 0.5
    sd: float = 5.0
    seasonal_amplitude: float = 8.0
    seed: int = 0
    population: float = 1000.0
    n_sources: int = 3
    initial_infected: float = 10.0
    dt: float = 0.1

    def __post_init__(self):
        if not abs(self.ar) < 1:
            raise ValueError("|ar| must be < 1")
        if self.sd < 0 or self.seasonal_amplitude < 0:
            raise ValueError("sd and seasonal_amplitude must be >= 0")
        if self.n < 1 or self.T < 1 or self.period < 1:
            raise ValueError("n, T and period must be positive")
        if not 1 <= self.n_sources <= self.n:
            raise ValueError("n_sources must lie in [1, n]")


def seasonal_ar_noise(n: int, T: int, period: int, ar: float, sd: float, amplitude: float,
                      rng: np.random.Generator) -> np.ndarray:
    phase = rng.uniform(0.0, 2 * np.pi, size=n)
    t = np.arange(T)
    season = amplitude * np.sin(2 * np.pi * t[None, :] / period + phase[:, None])
    eps = rng.normal(0.0, sd, size=(n, T))
    u = np.empty((n, T))
    u[:, 0] = eps[:, 0] / np.sqrt(1 - ar * ar)
    for k in range(1, T):
        u[:, k] = ar * u[:, k - 1] + eps[:, k]
    return season + u


def initial_state(spec: SyntheticSpec, rng: np.random.Generator) -> CompartmentState:
    sources = rng.choice(spec.n, size=spec.n_sources, replace=False)
    s = np.full(spec.n, spec.population)
    i = np.zeros(spec.n)
    s[sources] -= spec.initial_infected
    i[sources] = spec.initial_infected
    return CompartmentState(s, i, np.zeros(spec.n))


def generate_synthetic(spec: SyntheticSpec, graph: SpatialGraph) -> tuple[PanelSeries, PanelSeries]:
    """Return ``(Y, I_true)`` on t = 0..T-1 with ``Y = max(I_true + noise, 0)``."""
    if graph.n != spec.n:
        raise ValueError(f"graph has {graph.n} nodes, spec asks for {spec.n}")
    rng = np.random.default_rng(spec.seed)
    init = initial_state(spec, rng)
    if spec.T > 1:
        traj = integrate(init, spec.params, graph, float(spec.T - 1), spec.dt,
                         save_every=int(round(1 / spec.dt)))
        truth = infected_curve(traj, np.arange(spec.T, dtype=float),
                               time_labels=[str(k) for k in range(spec.T)])
    else:
        truth = PanelSeries(init.i[:, None], tuple(str(k) for k in range(spec.n)), ("0",))
    labels = graph.node_labels or tuple(f"loc{k}" for k in range(spec.n))
    truth = PanelSeries(truth.values, labels, truth.time_labels)
    if spec.sd == 0 and spec.seasonal_amplitude == 0:
        return truth.with_values(truth.values.copy()), truth
    noise = seasonal_ar_noise(spec.n, spec.T, spec.period, spec.ar, spec.sd,
                              spec.seasonal_amplitude, rng)
    return truth.with_values(np.maximum(truth.values + noise, 0.0)), truth


RECOVERY_THETA = {"alpha": 0.01, "beta": 1e-3, "gamma": 0.2, "sigma": 0.05, "mu": 0.01}


def recovery_problem(seed: int = 1, T: int = 60, noise: float = 5.0, lam: float = 10.0,
                     theta: dict | None = None):
    """Calibration test bed: a 10-node ring with two chords, outbreak seeded
    at nodes 0 and 4, observed infections with Gaussian noise (floored at 0).

    Returns ``(graph, ObservedData, theta_true)``.
    """
    from .calibrate import ObservedData, Simulator
    from .graph import build_graph

    theta = dict(RECOVERY_THETA if theta is None else theta)
    n = 10
    graph = build_graph(n, [(i, (i + 1) % n) for i in range(n)] + [(0, 5), (2, 7)])
    i0 = np.zeros(n)
    i0[0], i0[4] = 5.0, 2.0
    init = CompartmentState(1000.0 - i0, i0, np.zeros(n))
    blank = ObservedData(PanelSeries.from_array(np.zeros((n, T))), init, lam)
    _, infected = Simulator(blank, graph).run(theta)
    rng = np.random.default_rng(seed)
    y = np.maximum(infected + rng.normal(0.0, noise, infected.shape), 0.0) if noise > 0 else infected
    return graph, ObservedData(PanelSeries.from_array(y), init, lam), theta
