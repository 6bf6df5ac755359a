"""Networked SIR model with saturated incidence and graph-Laplacian diffusion.

Per node k:

    dS_k/dt = sigma*(L S)_k + Lambda - beta*S_k*I_k/(1 + alpha*I_k) - mu*S_k
    dI_k/dt = sigma*(L I)_k + beta*S_k*I_k/(1 + alpha*I_k) - (gamma + mu)*I_k
    dR_k/dt = sigma*(L R)_k + gamma*I_k - mu*R_k

integrated with fixed-step classical RK4. Time units are abstract.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numba
import numpy as np

from .errors import (
    DegenerateParams,
    LengthMismatch,
    NegativeStateBeyondTolerance,
    NonFiniteState,
    OutOfRange,
)
from .graph import SpatialGraph
from .panel import PanelSeries

log = logging.getLogger(__name__)

NEG_TOL = 1e-9


@dataclass(frozen=True)
class MnSirParams:
    lam: float = 10.0      # recruitment Lambda
    mu: float = 0.01       # natural death rate
    beta: float = 1e-4     # transmission coefficient
    gamma: float = 0.25    # recovery rate
    alpha: float = 0.5     # saturation factor
    sigma: float = 0.75    # diffusion coefficient, in [0, 1]

    def __post_init__(self):
        for name in ("lam", "mu", "beta", "gamma", "alpha", "sigma"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise DegenerateParams(f"{name} must be finite and >= 0, got {v}")
        if self.sigma > 1:
            raise DegenerateParams(f"sigma must lie in [0, 1], got {self.sigma}")

    def with_(self, **kw) -> "MnSirParams":
        return replace(self, **kw)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("lam", "mu", "beta", "gamma", "alpha", "sigma")}


# Stability test parameters (rates per day): R0 < 1 here, R0 > 1 in the endemic variant.
DISEASE_FREE_PARAMS = MnSirParams(lam=10.0, mu=0.01, beta=1e-4, gamma=0.25, alpha=0.5, sigma=0.75)
ENDEMIC_PARAMS = DISEASE_FREE_PARAMS.with_(beta=1e-3, sigma=1e-5)


@dataclass(frozen=True)
class CompartmentState:
    s: np.ndarray
    i: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        s, i, r = (np.array(v, dtype=float).reshape(-1) for v in (self.s, self.i, self.r))
        if not (s.shape == i.shape == r.shape):
            raise LengthMismatch(f"compartment lengths differ: {s.shape}, {i.shape}, {r.shape}")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "i", i)
        object.__setattr__(self, "r", r)

    @property
    def n(self) -> int:
        return self.s.shape[0]

    @classmethod
    def uniform(cls, n: int, s: float, i: float = 0.0, r: float = 0.0) -> "CompartmentState":
        return cls(np.full(n, s), np.full(n, i), np.full(n, r))

    def is_nonnegative(self) -> bool:
        return bool(np.all(self.s >= 0) and np.all(self.i >= 0) and np.all(self.r >= 0))


def point_source_state(n: int, source: int = 19, population: float = 1000.0,
                       infected: float = 10.0) -> CompartmentState:
    """Every node at ``population`` susceptibles except ``source``, which
    starts with ``infected`` cases taken out of its susceptibles.

    ``source`` is zero-based: 19 is prefecture 20 (Nagano) of the Japan network.
    """
    s = np.full(n, population)
    i = np.zeros(n)
    s[source] -= infected
    i[source] = infected
    return CompartmentState(s, i, np.zeros(n))


@dataclass(frozen=True)
class CompartmentTrajectory:
    times: np.ndarray   # (K,)
    s: np.ndarray       # (K, n)
    i: np.ndarray
    r: np.ndarray
    node_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if not (len(self.times) == self.s.shape[0] == self.i.shape[0] == self.r.shape[0]):
            raise LengthMismatch("trajectory arrays have inconsistent lengths")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    @property
    def n(self) -> int:
        return self.s.shape[1]

    def state(self, k: int) -> CompartmentState:
        return CompartmentState(self.s[k], self.i[k], self.r[k])

    @property
    def final(self) -> CompartmentState:
        return self.state(-1)

    def min_value(self) -> float:
        return float(min(self.s.min(), self.i.min(), self.r.min()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "node", "S", "I", "R"])
        labels = self.node_labels or tuple(str(k) for k in range(self.n))
        for k, t in enumerate(self.times):
            for x in range(self.n):
                w.writerow([f"{t:.10g}", labels[x], repr(float(self.s[k, x])),
                            repr(float(self.i[k, x])), repr(float(self.r[k, x]))])
        return buf.getvalue()


@dataclass(frozen=True)
class EquilibriumReport:
    r0: float
    dfe: tuple[float, float, float]
    endemic: tuple[float, float, float] | None

    @property
    def classification(self) -> str:
        return "Endemic" if self.endemic is not None else "DiseaseFree"


def _check_denominators(p: MnSirParams) -> None:
    if p.mu <= 0:
        raise DegenerateParams("mu must be > 0")
    if p.gamma + p.mu <= 0:
        raise DegenerateParams("gamma + mu must be > 0")


def basic_reproduction_number(params: MnSirParams) -> float:
    """R0 = beta * Lambda / (mu * (gamma + mu))."""
    _check_denominators(params)
    p = params
    return p.beta * p.lam / (p.mu * (p.gamma + p.mu))


def equilibria(params: MnSirParams) -> EquilibriumReport:
    p = params
    r0 = basic_reproduction_number(p)
    dfe = (p.lam / p.mu, 0.0, 0.0)
    endemic = None
    if r0 > 1:
        denom = p.alpha * p.mu + p.beta
        s_star = (p.lam * p.alpha + (p.gamma + p.mu)) / denom
        i_star = p.mu * (r0 - 1) / denom
        r_star = p.gamma * (r0 - 1) / denom
        endemic = (s_star, i_star, r_star)
    return EquilibriumReport(r0=r0, dfe=dfe, endemic=endemic)


@numba.njit(cache=True)
def _deriv(s, i, r, indptr, indices, lam, mu, beta, gamma, alpha, sigma, ds, di, dr):
    n = s.shape[0]
    for k in range(n):
        ls = 0.0
        li = 0.0
        lr = 0.0
        for p in range(indptr[k], indptr[k + 1]):
            j = indices[p]
            ls += s[j] - s[k]
            li += i[j] - i[k]
            lr += r[j] - r[k]
        inc = beta * s[k] * i[k] / (1.0 + alpha * i[k])
        ds[k] = sigma * ls + lam - inc - mu * s[k]
        di[k] = sigma * li + inc - (gamma + mu) * i[k]
        dr[k] = sigma * lr + gamma * i[k] - mu * r[k]


@numba.njit(cache=True)
def _rk4_run(s0, i0, r0, indptr, indices, lam, mu, beta, gamma, alpha, sigma,
             dt, nsteps, save_every, neg_tol):
    """Returns (S, I, R, status, fail_step); status 0 ok, 1 non-finite, 2 negative."""
    n = s0.shape[0]
    nsave = nsteps // save_every + 1
    S = np.empty((nsave, n))
    I = np.empty((nsave, n))
    R = np.empty((nsave, n))
    s = s0.copy()
    i = i0.copy()
    r = r0.copy()
    S[0] = s
    I[0] = i
    R[0] = r
    k1s = np.empty(n); k1i = np.empty(n); k1r = np.empty(n)
    k2s = np.empty(n); k2i = np.empty(n); k2r = np.empty(n)
    k3s = np.empty(n); k3i = np.empty(n); k3r = np.empty(n)
    k4s = np.empty(n); k4i = np.empty(n); k4r = np.empty(n)
    ts = np.empty(n); ti = np.empty(n); tr = np.empty(n)
    h2 = 0.5 * dt
    row = 1
    for step in range(1, nsteps + 1):
        _deriv(s, i, r, indptr, indices, lam, mu, beta, gamma, alpha, sigma, k1s, k1i, k1r)
        for k in range(n):
            ts[k] = s[k] + h2 * k1s[k]
            ti[k] = i[k] + h2 * k1i[k]
            tr[k] = r[k] + h2 * k1r[k]
        _deriv(ts, ti, tr, indptr, indices, lam, mu, beta, gamma, alpha, sigma, k2s, k2i, k2r)
        for k in range(n):
            ts[k] = s[k] + h2 * k2s[k]
            ti[k] = i[k] + h2 * k2i[k]
            tr[k] = r[k] + h2 * k2r[k]
        _deriv(ts, ti, tr, indptr, indices, lam, mu, beta, gamma, alpha, sigma, k3s, k3i, k3r)
        for k in range(n):
            ts[k] = s[k] + dt * k3s[k]
            ti[k] = i[k] + dt * k3i[k]
            tr[k] = r[k] + dt * k3r[k]
        _deriv(ts, ti, tr, indptr, indices, lam, mu, beta, gamma, alpha, sigma, k4s, k4i, k4r)
        status = 0
        for k in range(n):
            s[k] += dt / 6.0 * (k1s[k] + 2.0 * k2s[k] + 2.0 * k3s[k] + k4s[k])
            i[k] += dt / 6.0 * (k1i[k] + 2.0 * k2i[k] + 2.0 * k3i[k] + k4i[k])
            r[k] += dt / 6.0 * (k1r[k] + 2.0 * k2r[k] + 2.0 * k3r[k] + k4r[k])
            if not (np.isfinite(s[k]) and np.isfinite(i[k]) and np.isfinite(r[k])):
                status = 1
            elif s[k] < -neg_tol or i[k] < -neg_tol or r[k] < -neg_tol:
                status = 2
            else:
                if s[k] < 0.0:
                    s[k] = 0.0
                if i[k] < 0.0:
                    i[k] = 0.0
                if r[k] < 0.0:
                    r[k] = 0.0
        if status != 0:
            return S[:row], I[:row], R[:row], status, step
        if step % save_every == 0:
            S[row] = s
            I[row] = i
            R[row] = r
            row += 1
    return S, I, R, 0, 0


def rhs(state: CompartmentState, params: MnSirParams, graph: SpatialGraph):
    """Time derivatives ``(dS, dI, dR)`` at ``state``."""
    if state.n != graph.n:
        raise LengthMismatch(f"state has {state.n} nodes, graph has {graph.n}")
    indptr, indices = graph.csr()
    ds, di, dr = np.empty(graph.n), np.empty(graph.n), np.empty(graph.n)
    p = params
    _deriv(state.s, state.i, state.r, indptr, indices,
           p.lam, p.mu, p.beta, p.gamma, p.alpha, p.sigma, ds, di, dr)
    return ds, di, dr


def _n_steps(span: float, dt: float) -> int:
    steps = int(round(span / dt))
    if steps < 1 or abs(steps * dt - span) > 1e-9 * max(1.0, span):
        raise ValueError(f"t_end={span} is not a positive multiple of dt={dt}")
    return steps


def integrate(init: CompartmentState, params: MnSirParams, graph: SpatialGraph,
              t_end: float, dt: float = 0.1, save_every: int = 1) -> CompartmentTrajectory:
    """Fixed-step RK4 from ``t = 0`` to ``t_end``, recording every ``save_every`` steps.

    Round-off undershoot in ``[-1e-9, 0)`` is clamped to zero; anything more
    negative raises :class:`NegativeStateBeyondTolerance`.
    """
    if dt <= 0 or t_end <= 0:
        raise ValueError("dt and t_end must be positive")
    if init.n != graph.n:
        raise LengthMismatch(f"initial state has {init.n} nodes, graph has {graph.n}")
    if not init.is_nonnegative():
        raise ValueError("initial state must be nonnegative")
    nsteps = _n_steps(t_end, dt)
    if nsteps % save_every:
        raise ValueError("save_every must divide the number of steps")
    indptr, indices = graph.csr()
    p = params
    S, I, R, status, fail = _rk4_run(init.s, init.i, init.r, indptr, indices,
                                     p.lam, p.mu, p.beta, p.gamma, p.alpha, p.sigma,
                                     float(dt), nsteps, int(save_every), NEG_TOL)
    if status == 1:
        raise NonFiniteState(f"state became non-finite at t={fail * dt:g}")
    if status == 2:
        raise NegativeStateBeyondTolerance(
            f"state fell below -{NEG_TOL:g} at t={fail * dt:g}; reduce dt")
    times = np.arange(S.shape[0]) * (dt * save_every)
    traj = CompartmentTrajectory(times, S, I, R, graph.node_labels)
    bound = boundedness_bound(init, params)
    if np.max(S + I) > bound * (1 + 1e-6):
        log.warning("S+I exceeded its a-priori bound %.6g; step size may be too large", bound)
    return traj


def boundedness_bound(init: CompartmentState, params: MnSirParams) -> float:
    """Upper bound on ``S + I`` at every node and time: ``max(Lambda/mu, max(S0 + I0))``."""
    return max(params.lam / params.mu, float(np.max(init.s + init.i)))


def suggest_dt(params: MnSirParams, graph: SpatialGraph, init: CompartmentState,
               dt_max: float = 0.1) -> float:
    """Largest ``dt_max / 2**k`` with ``dt * rho <= 1``, where ``rho`` bounds the
    Jacobian's spectral radius (diffusion ``2 sigma max_deg`` plus local rates)."""
    k = boundedness_bound(init, params)
    deg = int(graph.degrees.max()) if graph.n > 1 else 0
    p = params
    rho = 2 * p.sigma * deg + p.mu + p.gamma + 2 * p.beta * k
    dt = dt_max
    while dt * rho > 1.0:
        dt /= 2
    return dt


def infected_curve(traj: CompartmentTrajectory, obs_times: Sequence[float],
                   time_labels: Sequence[str] | None = None) -> PanelSeries:
    """Linearly interpolate the infected field onto ``obs_times``."""
    t = np.asarray(obs_times, dtype=float)
    lo, hi = traj.times[0], traj.times[-1]
    slack = 1e-9 * max(1.0, abs(hi))
    if np.any(t < lo - slack) or np.any(t > hi + slack):
        raise OutOfRange(f"observation times must lie in [{lo}, {hi}]")
    t = np.clip(t, lo, hi)
    vals = np.empty((traj.n, t.size))
    for x in range(traj.n):
        vals[x] = np.interp(t, traj.times, traj.i[:, x])
    labels = traj.node_labels or tuple(str(k) for k in range(traj.n))
    tl = time_labels if time_labels is not None else tuple(f"{v:g}" for v in t)
    return PanelSeries(vals, tuple(labels), tuple(tl))


def saturation_sweep(base: MnSirParams, alphas: Sequence[float], init: CompartmentState,
                     graph: SpatialGraph, t_end: float, dt: float = 0.1,
                     node: int = 19) -> np.ndarray:
    """Peak of ``I`` at ``node`` over the horizon, one entry per saturation factor."""
    if len(alphas) == 0:
        raise ValueError("alphas must be nonempty")
    peaks = []
    for a in alphas:
        if a <= 0:
            raise ValueError("saturation factors must be positive")
        traj = integrate(init, base.with_(alpha=float(a)), graph, t_end, dt)
        peaks.append(float(traj.i[:, node].max()))
    return np.array(peaks)


def converges_to(traj: CompartmentTrajectory, s_target: float, i_target: float,
                 tol: float = 1e-2, tail: float = 0.1) -> bool:
    """True when ``max |S - s_target|`` and ``max |I - i_target|`` stay below
    ``tol`` over the final ``tail`` fraction of the horizon."""
    k0 = int(math.floor((1 - tail) * (len(traj.times) - 1)))
    ds = np.max(np.abs(traj.s[k0:] - s_target))
    di = np.max(np.abs(traj.i[k0:] - i_target))
    return bool(max(ds, di) < tol)
