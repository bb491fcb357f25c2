import numpy as np
import pytest
from scipy.special import expit, logit

from jointcal import fit_propensity, ipw_weights
from jointcal.core import derive_rng
from jointcal.propensity import PropensityError, PropensityFit
from jointcal.simulation import PROPENSITY_COEF, SimConfig, gen_population, poisson_sample


def test_intercept_only_examples():
    fit = fit_propensity(np.empty((2, 0)), np.empty((4, 0)))
    assert fit.converged and abs(fit.theta[0]) <= 1e-8
    fit = fit_propensity(np.empty((1, 0)), np.empty((4, 0)))
    assert fit.theta[0] == pytest.approx(logit(0.25), abs=1e-8)
    np.testing.assert_allclose(ipw_weights(fit), [4.0])


def test_intercept_monotone_in_sampling_fraction():
    pop = np.empty((100, 0))
    thetas = [fit_propensity(np.empty((n, 0)), pop).theta[0] for n in (5, 20, 50, 80, 95)]
    assert np.all(np.diff(thetas) > 0)


def test_score_balances_and_weights_reconstruct_n(rng):
    Xu = rng.normal(size=(3000, 2))
    pi = expit(-1.0 + Xu @ [0.5, -0.3])
    Xs = Xu[rng.random(3000) < pi]
    fit = fit_propensity(Xs, Xu)
    assert fit.converged
    Z = np.column_stack([np.ones(3000), Xu])
    assert np.all(np.abs(fit.score) <= 1e-8 * np.abs(Z).sum(axis=0))
    w = ipw_weights(fit)
    assert np.all(w > 1)
    assert w @ fit.pi_sample == pytest.approx(len(Xs), rel=1e-12)


def test_recovers_generator_coefficients():
    cfg = SimConfig(N=20000, n=10000, rho_list=(0.5,), R=1)
    errors = []
    for seed in range(5):
        pop = gen_population(cfg, seed)
        idx = poisson_sample(pop.pi, derive_rng(seed, 9))
        fit = fit_propensity(pop.X[idx], pop.X)
        assert fit.converged
        errors.append(fit.theta - np.concatenate([[pop.theta0], PROPENSITY_COEF]))
    assert np.all(np.abs(np.mean(errors, axis=0)) < 0.1)


def test_ipw_errors():
    bad = PropensityFit(np.zeros(1), np.array([0.5]), False, 3, np.ones(1), "stalled")
    with pytest.raises(PropensityError, match="stalled"):
        ipw_weights(bad)
    zero = PropensityFit(np.zeros(1), np.array([0.5, 0.0]), True, 1, np.zeros(1))
    with pytest.raises(PropensityError):
        ipw_weights(zero)
    ok = PropensityFit(np.zeros(1), np.array([0.5, 0.25]), True, 1, np.zeros(1))
    np.testing.assert_allclose(ipw_weights(ok), [2, 4])


def test_census_is_reported():
    fit = fit_propensity(np.empty((4, 0)), np.empty((4, 0)))
    assert not fit.converged
    assert "n" in fit.message


def test_width_mismatch():
    with pytest.raises(ValueError):
        fit_propensity(np.ones((2, 1)), np.ones((4, 2)))
