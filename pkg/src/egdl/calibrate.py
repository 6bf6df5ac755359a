"""Fit MN-SIR parameters to an incidence panel.

Least squares gives a starting point; truncated-normal priors are centred
on it and an adaptive random-walk Metropolis sampler draws from the
posterior. One observation step maps to one model time unit, and the
first observation is model time 0.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_ndtr

from .diagnostics import PosteriorSummary, summarize_draws
from .errors import AllProposalsRejected, ShapeMismatch, SimulationFailure
from .graph import SpatialGraph
from .mnsir import NEG_TOL, CompartmentState, MnSirParams, _n_steps, _rk4_run
from .panel import PanelSeries

log = logging.getLogger(__name__)

PARAM_NAMES = ("alpha", "beta", "gamma", "sigma", "mu")
THETA_NAMES = PARAM_NAMES + ("eta",)

# prior standard deviations used around the least-squares estimate
DEFAULT_PRIOR_SD = {"alpha": 0.1, "beta": 0.01, "gamma": 0.1, "sigma": 0.3, "mu": 0.01}
UPPER = {"sigma": 1.0}
_LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class TruncatedNormal:
    mean: float
    sd: float
    lower: float = 0.0
    initval: float | None = None

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError(f"prior sd must be > 0, got {self.sd}")

    def logpdf(self, x: float) -> float:
        if x < self.lower:
            return -math.inf
        z = (x - self.mean) / self.sd
        # normalizer: P(X >= lower) under the untruncated normal
        log_mass = log_ndtr((self.mean - self.lower) / self.sd)
        return -0.5 * z * z - 0.5 * _LOG_2PI - math.log(self.sd) - float(log_mass)


@dataclass(frozen=True)
class PriorSpec:
    alpha: TruncatedNormal
    beta: TruncatedNormal
    gamma: TruncatedNormal
    sigma: TruncatedNormal
    mu: TruncatedNormal
    eta_scale: float = 10.0

    @classmethod
    def centered_on(cls, theta_ls: Mapping[str, float], sds: Mapping[str, float] | None = None,
                    eta_scale: float = 10.0) -> "PriorSpec":
        sds = {**DEFAULT_PRIOR_SD, **(sds or {})}
        return cls(**{k: TruncatedNormal(float(theta_ls[k]), float(sds[k]), 0.0,
                                         float(theta_ls[k])) for k in PARAM_NAMES},
                   eta_scale=eta_scale)

    def initial(self) -> dict:
        return {k: (getattr(self, k).initval if getattr(self, k).initval is not None
                    else getattr(self, k).mean) for k in PARAM_NAMES}

    def logpdf(self, theta: Mapping[str, float]) -> float:
        total = 0.0
        for k in PARAM_NAMES:
            total += getattr(self, k).logpdf(theta[k])
        eta = theta["eta"]
        if eta <= 0:
            return -math.inf
        # half-normal(eta_scale)
        total += math.log(2) - 0.5 * (eta / self.eta_scale) ** 2 - 0.5 * _LOG_2PI \
            - math.log(self.eta_scale)
        return total


@dataclass(frozen=True)
class ObservedData:
    """Observed infected panel plus the state used to start every simulation."""

    panel: PanelSeries
    init_state: CompartmentState
    lam: float
    susceptible: PanelSeries | None = None
    dt: float = 0.1

    def __post_init__(self):
        if self.init_state.n != self.panel.n_locations:
            raise ShapeMismatch("initial state and panel disagree on the number of locations")
        if not np.all(np.isfinite(self.panel.values)) or np.any(self.panel.values < 0):
            raise ValueError("observed panel must be finite and nonnegative")
        if self.susceptible is not None and not self.susceptible.same_shape(self.panel):
            raise ShapeMismatch("susceptible panel must match the infected panel")
        steps_per_unit = 1.0 / self.dt
        if abs(steps_per_unit - round(steps_per_unit)) > 1e-9:
            raise ValueError("dt must divide one observation step")

    @classmethod
    def from_population(cls, panel: PanelSeries, population, lam: float,
                        susceptible: PanelSeries | None = None, dt: float = 0.1) -> "ObservedData":
        """S0 = population, I0 = first observation, R0 = 0."""
        pop = np.broadcast_to(np.asarray(population, dtype=float), (panel.n_locations,))
        i0 = panel.values[:, 0].copy()
        init = CompartmentState(np.maximum(pop - i0, 0.0), i0, np.zeros(panel.n_locations))
        return cls(panel, init, float(lam), susceptible, dt)

    @property
    def n_obs(self) -> int:
        return self.panel.values.size * (2 if self.susceptible is not None else 1)


class Simulator:
    """Runs the model on the observation grid for candidate parameters."""

    def __init__(self, data: ObservedData, graph: SpatialGraph):
        if graph.n != data.panel.n_locations:
            raise ShapeMismatch("graph and panel disagree on the number of locations")
        self.data = data
        self.indptr, self.indices = graph.csr()
        self.per_unit = int(round(1.0 / data.dt))
        self.T = data.panel.T

    def run(self, theta: Mapping[str, float], horizon: int | None = None):
        """Simulated ``(S, I)`` panels of shape ``(n, horizon)`` on t = 0..horizon-1."""
        horizon = self.T if horizon is None else horizon
        d = self.data
        init = d.init_state
        if horizon == 1:
            return init.s[:, None].copy(), init.i[:, None].copy()
        nsteps = (horizon - 1) * self.per_unit
        S, I, _, status, _ = _rk4_run(init.s, init.i, init.r, self.indptr, self.indices,
                                      d.lam, theta["mu"], theta["beta"], theta["gamma"],
                                      theta["alpha"], theta["sigma"], d.dt, nsteps,
                                      self.per_unit, NEG_TOL)
        if status != 0:
            raise SimulationFailure(f"simulation failed (status {status}) for {dict(theta)}")
        return S.T, I.T

    def sse(self, theta: Mapping[str, float]) -> float:
        S, I = self.run(theta)
        total = float(np.sum((I - self.data.panel.values) ** 2))
        if self.data.susceptible is not None:
            total += float(np.sum((S - self.data.susceptible.values) ** 2))
        return total


def in_bounds(theta: Mapping[str, float]) -> bool:
    for k in PARAM_NAMES:
        v = theta[k]
        if not math.isfinite(v) or v < 0 or v > UPPER.get(k, math.inf):
            return False
    return "eta" not in theta or theta["eta"] > 0


def _gaussian_loglik(sse: float, n_obs: int, eta: float) -> float:
    return -0.5 * sse / eta ** 2 - n_obs * (math.log(eta) + 0.5 * _LOG_2PI)


def log_likelihood(theta: Mapping[str, float], data: ObservedData, graph: SpatialGraph,
                   simulator: Simulator | None = None) -> float:
    if not in_bounds(theta):
        return -math.inf
    sim = simulator or Simulator(data, graph)
    try:
        sse = sim.sse(theta)
    except SimulationFailure:
        return -math.inf
    return _gaussian_loglik(sse, data.n_obs, theta["eta"])


def log_posterior(theta: Mapping[str, float], data: ObservedData, graph: SpatialGraph,
                  priors: PriorSpec, simulator: Simulator | None = None) -> float:
    """Log prior + Gaussian log likelihood with shared scale ``eta``; ``-inf`` off support."""
    if not in_bounds(theta):
        return -math.inf
    lp = priors.logpdf(theta)
    if lp == -math.inf:
        return lp
    return lp + log_likelihood(theta, data, graph, simulator)


# ---------------------------------------------------------------- least squares

@dataclass
class NlsResult:
    theta: dict
    sse: float
    initial_sse: float
    improved: bool
    trace: list = field(default_factory=list)   # best SSE after each iteration
    nfev: int = 0


def nls_fit(data: ObservedData, graph: SpatialGraph, init_guess: Mapping[str, float],
            priors: PriorSpec | None = None, maxiter: int = 2000,
            fit: Sequence[str] = PARAM_NAMES) -> NlsResult:
    """Nelder-Mead least squares over the parameters in ``fit``.

    Parameters are optimised on a scale relative to ``init_guess`` with box
    bounds ``[0, upper]``. Returns ``init_guess`` with ``improved=False``
    when the search does not beat the starting SSE.
    """
    guess = {k: float(init_guess[k]) for k in PARAM_NAMES}
    if not in_bounds(guess):
        raise ValueError(f"initial guess out of bounds: {guess}")
    sim = Simulator(data, graph)
    sse0 = sim.sse(guess)   # SimulationFailure propagates: nothing to improve from
    fit = tuple(fit)
    fallback = DEFAULT_PRIOR_SD if priors is None else {k: getattr(priors, k).sd for k in PARAM_NAMES}
    scale = np.array([abs(guess[k]) if guess[k] > 0 else fallback[k] for k in fit])
    nfev = 0

    def unpack(z):
        th = dict(guess)
        for k, v in zip(fit, np.asarray(z) * scale):
            th[k] = float(v)
        return th

    def objective(z):
        nonlocal nfev
        nfev += 1
        th = unpack(z)
        if not in_bounds(th):
            return math.inf
        try:
            return sim.sse(th)
        except SimulationFailure:
            return math.inf

    trace = [sse0]
    z0 = np.array([guess[k] for k in fit]) / scale
    best = {"f": sse0}

    def callback(intermediate_result):
        best["f"] = min(best["f"], float(intermediate_result.fun))
        trace.append(best["f"])

    bounds = [(0.0, UPPER.get(k, math.inf) / s) for k, s in zip(fit, scale)]
    res = minimize(objective, z0, method="Nelder-Mead", bounds=bounds, callback=callback,
                   options={"maxiter": maxiter, "xatol": 1e-6, "fatol": 1e-10})
    theta = unpack(res.x)
    sse = float(res.fun)
    if not sse < sse0:
        log.warning("least squares made no improvement over the initial guess")
        return NlsResult(dict(guess), sse0, sse0, False, trace, nfev)
    return NlsResult(theta, sse, sse0, True, trace, nfev)


# ---------------------------------------------------------------- MCMC

@dataclass(frozen=True)
class McmcConfig:
    chains: int = 2
    warmup: int = 1000
    draws: int = 2000
    seed: int = 0
    adapt_interval: int = 25
    accept_band: tuple[float, float] = (0.2, 0.4)
    init_jitter: float = 0.02
    initial_scale: Sequence[float] | None = None
    rotate_at: tuple[float, ...] = (0.4, 0.7)

    def __post_init__(self):
        if self.chains < 2:
            raise ValueError("at least two chains are required")
        if self.warmup < 0 or self.draws < 1:
            raise ValueError("warmup must be >= 0 and draws >= 1")


@dataclass(frozen=True)
class PosteriorChains:
    names: tuple[str, ...]
    draws: np.ndarray        # (chains, draws, params), post warm-up
    acceptance: np.ndarray   # (chains, params) post warm-up acceptance rates
    scales: np.ndarray       # (chains, params) frozen proposal scales
    seed: int

    def param(self, name: str) -> np.ndarray:
        return self.draws[:, :, self.names.index(name)]

    def posterior_mean(self) -> dict:
        flat = self.draws.reshape(-1, self.draws.shape[2]).mean(axis=0)
        return dict(zip(self.names, (float(v) for v in flat)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["chain", "draw", *self.names])
        for c in range(self.draws.shape[0]):
            for k in range(self.draws.shape[1]):
                w.writerow([c, k, *(repr(float(v)) for v in self.draws[c, k])])
        return buf.getvalue()


def metropolis(log_density: Callable[[np.ndarray, int, np.ndarray | None], tuple],
               init_points: np.ndarray, config: McmcConfig, names: Sequence[str],
               scales0: np.ndarray) -> PosteriorChains:
    """Componentwise adaptive random-walk Metropolis.

    ``log_density(x, k, cache)`` returns ``(logp, cache)`` for the point
    ``x`` after coordinate ``k`` moved (``k = -1`` for a fresh point or a
    move along a rotated axis); the cache lets the caller skip work that
    coordinate ``k`` does not affect.

    Warm-up adapts one proposal scale per axis toward ``accept_band``. At
    the points listed in ``config.rotate_at`` (fractions of warm-up) the
    update axes are re-aligned with the eigenvectors of the chain's recent
    warm-up covariance, so single-axis Gaussian moves follow correlated
    ridges. Axes and scales are frozen once sampling starts.
    """
    init_points = np.asarray(init_points, dtype=float)
    n_chains, dim = init_points.shape
    scales0 = np.asarray(scales0, dtype=float)
    if np.any(~(scales0 > 0)):
        raise AllProposalsRejected("proposal scale is zero: the chain cannot move")
    ss = np.random.SeedSequence(config.seed)
    rngs = [np.random.default_rng(s) for s in ss.spawn(n_chains)]
    out = np.empty((n_chains, config.draws, dim))
    acc_rates = np.empty((n_chains, dim))
    final_scales = np.empty((n_chains, dim))
    lo, hi = config.accept_band
    rotate_iters = sorted({int(f * config.warmup) for f in config.rotate_at
                           if 0 < f < 1 and int(f * config.warmup) >= 4 * dim})
    for c in range(n_chains):
        rng = rngs[c]
        x = init_points[c].copy()
        logp, cache = log_density(x, -1, None)
        if not math.isfinite(logp):
            raise SimulationFailure(f"chain {c} starts at a point of zero density")
        axes = None                       # None: coordinate axes
        log_scale = np.log(scales0)
        history = np.empty((config.warmup, dim))
        window_start = 0
        batch_acc = np.zeros(dim)
        batch_no = 0
        accepted = np.zeros(dim)
        for it in range(config.warmup + config.draws):
            noise = rng.standard_normal(dim)
            logu = np.log(rng.random(dim))
            for k in range(dim):
                step = math.exp(log_scale[k]) * noise[k]
                if axes is None:
                    y = x.copy()
                    y[k] += step
                    logq, cache_q = log_density(y, k, cache)
                else:
                    y = x + step * axes[:, k]
                    logq, cache_q = log_density(y, -1, cache)
                if logu[k] < logq - logp:
                    x, logp, cache = y, logq, cache_q
                    if it < config.warmup:
                        batch_acc[k] += 1
                    else:
                        accepted[k] += 1
            if it < config.warmup:
                history[it] = x
                if (it + 1) % config.adapt_interval == 0:
                    batch_no += 1
                    rate = batch_acc / config.adapt_interval
                    delta = max(0.05, 1.0 / math.sqrt(batch_no))
                    log_scale = log_scale - delta * (rate < lo) + delta * (rate > hi)
                    batch_acc[:] = 0
                if it + 1 in rotate_iters:
                    recent = history[(window_start + it + 1) // 2: it + 1]
                    cov = np.atleast_2d(np.cov(recent, rowvar=False))
                    evals, evecs = np.linalg.eigh(cov)
                    if np.all(np.isfinite(evals)) and evals.min() > 0:
                        axes = evecs
                        log_scale = np.log(2.4 * np.sqrt(evals))
                        batch_no = 0
                    window_start = it + 1
            else:
                out[c, it - config.warmup] = x
        acc_rates[c] = accepted / config.draws
        final_scales[c] = np.exp(log_scale)
        if np.any(acc_rates[c] == 0):
            bad = [int(k) for k in np.flatnonzero(acc_rates[c] == 0)]
            raise AllProposalsRejected(f"chain {c}: no proposals accepted along axes {bad}")
    return PosteriorChains(tuple(names), out, acc_rates, final_scales, config.seed)


def sample_density(log_density: Callable[[np.ndarray], float], init, config: McmcConfig,
                   names: Sequence[str] | None = None, scale=1.0) -> PosteriorChains:
    """Run the sampler on an arbitrary closed-form log density (no ODE involved)."""
    init = np.atleast_1d(np.asarray(init, dtype=float))
    dim = init.size
    names = tuple(names) if names is not None else tuple(f"x{k}" for k in range(dim))
    scales0 = np.broadcast_to(np.asarray(scale, dtype=float), (dim,)).copy()
    points = np.tile(init, (config.chains, 1))
    return metropolis(lambda x, k, cache: (log_density(x), None), points, config, names, scales0)


def mcmc_sample(data: ObservedData, graph: SpatialGraph, priors: PriorSpec,
                config: McmcConfig = McmcConfig()) -> PosteriorChains:
    """Posterior draws of ``(alpha, beta, gamma, sigma, mu, eta)``."""
    sim = Simulator(data, graph)
    n_obs = data.n_obs
    eta_index = THETA_NAMES.index("eta")

    def as_theta(x):
        return dict(zip(THETA_NAMES, (float(v) for v in x)))

    def log_density(x, k, cache):
        th = as_theta(x)
        if not in_bounds(th):
            return -math.inf, cache
        lp = priors.logpdf(th)
        if lp == -math.inf:
            return lp, cache
        if k == eta_index and cache is not None:
            sse = cache       # eta does not change the simulation
        else:
            try:
                sse = sim.sse(th)
            except SimulationFailure:
                return -math.inf, cache
        return lp + _gaussian_loglik(sse, n_obs, th["eta"]), sse

    base = priors.initial()
    sse0 = sim.sse(base)
    eta0 = max(math.sqrt(sse0 / n_obs), 1e-6)
    x0 = np.array([base[k] for k in PARAM_NAMES] + [eta0])
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(config.chains + 1)[-1])
    points = x0 * np.exp(config.init_jitter * rng.standard_normal((config.chains, x0.size)))
    if config.initial_scale is not None:
        scales0 = np.asarray(config.initial_scale, dtype=float)
    else:
        scales0 = np.array([0.1 * abs(v) if v > 0 else getattr(priors, k).sd * 0.1
                            for k, v in zip(PARAM_NAMES, x0[:-1])] + [0.1 * eta0])
    return metropolis(log_density, points, config, THETA_NAMES, scales0)


def summarize(chains: PosteriorChains, hdi_mass: float = 0.94) -> PosteriorSummary:
    return summarize_draws(chains.draws, chains.names, hdi_mass)


def params_from_theta(theta: Mapping[str, float], lam: float) -> MnSirParams:
    return MnSirParams(lam=lam, mu=theta["mu"], beta=theta["beta"], gamma=theta["gamma"],
                       alpha=theta["alpha"], sigma=min(theta["sigma"], 1.0))
