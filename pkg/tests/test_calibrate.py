import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from egdl.calibrate import (
    PARAM_NAMES,
    THETA_NAMES,
    McmcConfig,
    ObservedData,
    PriorSpec,
    Simulator,
    TruncatedNormal,
    log_likelihood,
    log_posterior,
    mcmc_sample,
    nls_fit,
    params_from_theta,
    sample_density,
)
from egdl.errors import AllProposalsRejected
from egdl.panel import PanelSeries
from egdl.synth import recovery_problem


@pytest.fixture(scope="module")
def noiseless():
    return recovery_problem(noise=0.0)


@pytest.fixture(scope="module")
def noisy():
    return recovery_problem(seed=1)


# ------------------------------------------------------------- priors

@given(st.floats(0, 2), st.floats(0.01, 1), st.floats(0, 5))
def test_truncated_normal_matches_scipy(mean, sd, x):
    ref = stats.truncnorm.logpdf(x, (0 - mean) / sd, np.inf, loc=mean, scale=sd)
    assert TruncatedNormal(mean, sd).logpdf(x) == pytest.approx(ref, rel=1e-9, abs=1e-9)


def test_truncated_normal_off_support():
    assert TruncatedNormal(0.5, 0.1).logpdf(-1e-12) == -math.inf


def test_prior_includes_half_normal_scale():
    theta_ls = {"alpha": 0.3, "beta": 2e-4, "gamma": 0.1, "sigma": 0.5, "mu": 0.02}
    pri = PriorSpec.centered_on(theta_ls)
    theta = {**theta_ls, "eta": 3.0}
    sds = {"alpha": 0.1, "beta": 0.01, "gamma": 0.1, "sigma": 0.3, "mu": 0.01}
    ref = sum(stats.truncnorm.logpdf(theta[k], -theta_ls[k] / sds[k], np.inf, loc=theta_ls[k],
                                     scale=sds[k]) for k in PARAM_NAMES)
    ref += stats.halfnorm.logpdf(3.0, scale=10.0)
    assert pri.logpdf(theta) == pytest.approx(ref, rel=1e-12)
    assert pri.initial() == theta_ls


# ------------------------------------------------------------- likelihood

def test_log_posterior_support(noisy):
    graph, data, theta = noisy
    pri = PriorSpec.centered_on(theta)
    good = {**theta, "eta": 5.0}
    assert math.isfinite(log_posterior(good, data, graph, pri))
    for k in THETA_NAMES:
        assert log_posterior({**good, k: -1e-6}, data, graph, pri) == -math.inf
    assert log_posterior({**good, "sigma": 1.2}, data, graph, pri) == -math.inf


def test_perfect_fit_likelihood(noiseless):
    graph, data, theta = noiseless
    n = data.n_obs
    for eta in (0.5, 1.0):
        expected = -n * (math.log(eta) + 0.5 * math.log(2 * math.pi))
        assert log_likelihood({**theta, "eta": eta}, data, graph) == pytest.approx(expected, rel=1e-9)
    ll1 = log_likelihood({**theta, "eta": 1.0}, data, graph)
    ll2 = log_likelihood({**theta, "eta": 2.0}, data, graph)
    assert ll2 < ll1
    moved = log_likelihood({**theta, "gamma": 0.21, "eta": 1.0}, data, graph)
    assert moved < ll1


def test_simulator_time_grid(noiseless):
    graph, data, theta = noiseless
    S, I = Simulator(data, graph).run(theta)
    assert I.shape == (10, 60)
    np.testing.assert_array_equal(I[:, 0], data.init_state.i)
    assert Simulator(data, graph).run(theta, horizon=72)[1].shape == (10, 72)


def test_from_population():
    panel = PanelSeries.from_array([[3.0, 4.0], [0.0, 1.0]])
    d = ObservedData.from_population(panel, 100.0, lam=1.0)
    np.testing.assert_array_equal(d.init_state.s, [97.0, 100.0])
    np.testing.assert_array_equal(d.init_state.i, [3.0, 0.0])


# ------------------------------------------------------------- least squares

def test_nls_at_optimum(noiseless):
    graph, data, theta = noiseless
    res = nls_fit(data, graph, theta)
    assert res.sse < 1e-12
    for k in PARAM_NAMES:
        assert res.theta[k] == pytest.approx(theta[k], rel=1e-6)


def test_nls_improves_from_perturbed_guess(noisy):
    graph, data, theta = noisy
    guess = {k: v * (1.2 if i % 2 else 0.8) for i, (k, v) in enumerate(theta.items())}
    res = nls_fit(data, graph, guess)
    assert res.improved and res.sse < res.initial_sse
    assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))
    assert res.theta["beta"] == pytest.approx(theta["beta"], rel=0.05)


def test_nls_zero_panel_keeps_beta_zero(noiseless):
    graph, data, theta = noiseless
    zero = ObservedData(PanelSeries.from_array(np.zeros((10, 30))), data.init_state.__class__(
        np.full(10, 1000.0), np.zeros(10), np.zeros(10)), data.lam)
    res = nls_fit(zero, graph, {**theta, "beta": 0.0})
    assert res.theta["beta"] < 1e-8


# ------------------------------------------------------------- sampler

def test_standard_normal_moments():
    cfg = McmcConfig(chains=2, warmup=1000, draws=5000, seed=0)
    ch = sample_density(lambda x: -0.5 * float(x[0] ** 2), [0.5], cfg)
    flat = ch.draws.ravel()
    assert flat.size == 10_000
    assert abs(flat.mean()) < 0.05
    assert 0.95 < flat.std() < 1.05


def test_correlated_gaussian_covariance():
    cov = np.array([[1.0, 0.8], [0.8, 2.0]])
    prec = np.linalg.inv(cov)
    cfg = McmcConfig(chains=2, warmup=2000, draws=5000, seed=1)
    ch = sample_density(lambda x: -0.5 * float(x @ prec @ x), [0.0, 0.0], cfg)
    emp = np.cov(ch.draws.reshape(-1, 2), rowvar=False)
    assert np.all(np.abs(emp - cov) <= 0.05 * np.abs(cov))


def test_zero_scale_is_rejected():
    with pytest.raises(AllProposalsRejected):
        sample_density(lambda x: -0.5 * float(x[0] ** 2), [0.0], McmcConfig(warmup=10, draws=10),
                       scale=0.0)


def test_seed_determinism_and_shapes(noisy):
    graph, data, theta = noisy
    pri = PriorSpec.centered_on(theta)
    cfg = McmcConfig(warmup=60, draws=40, seed=7)
    a = mcmc_sample(data, graph, pri, cfg)
    b = mcmc_sample(data, graph, pri, cfg)
    assert a.draws.tobytes() == b.draws.tobytes()
    assert a.draws.shape == (2, 40, 6) and a.names == THETA_NAMES
    c = mcmc_sample(data, graph, pri, McmcConfig(warmup=60, draws=40, seed=8))
    assert c.draws.tobytes() != a.draws.tobytes()
    lines = a.to_csv().splitlines()
    assert lines[0] == "chain,draw,alpha,beta,gamma,sigma,mu,eta" and len(lines) == 81


def test_params_from_theta():
    p = params_from_theta({"alpha": 0.1, "beta": 1e-4, "gamma": 0.2, "sigma": 0.3, "mu": 0.01}, 10.0)
    assert (p.lam, p.alpha, p.sigma) == (10.0, 0.1, 0.3)
