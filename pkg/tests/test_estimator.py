from dataclasses import replace
from math import gamma

import numpy as np
import pytest
from scipy import integrate

from conftest import exact_moment_data, one_factor_params
from psychorank.estimator import (
    EstimatorOptions,
    casewise_scores,
    chi_square,
    detect_heywood,
    fit_ml,
    observed_information,
    standard_errors,
    yb_scaling,
)
from psychorank.ingest import LogitMatrix
from psychorank.model import ModelSpec, ParamSet, SpecError, implied_sigma, standardize
from psychorank.simulator import GenConfig, simulate_logits, v1_truth


@pytest.fixture(scope="module")
def sim6():
    V, _ = simulate_logits(GenConfig(1000, v1_truth(mu=np.linspace(-1, 1, 6)), seed=3))
    return LogitMatrix.from_logits(V)


@pytest.fixture(scope="module")
def fit6(sim6):
    return fit_ml(sim6, ModelSpec.one_factor(6))


def test_converged_fit_contract(fit6, sim6):
    assert fit6.converged and fit6.gradient_norm <= 1e-6
    assert fit6.T >= 0 and fit6.df == 9
    assert fit6.aic == pytest.approx(-2 * fit6.loglik + 2 * (6 + 12))
    assert np.max(np.abs(fit6.params.mu - sim6.k)) <= 1e-12
    assert fit6.params.lam[:, 0].sum() >= 0
    assert len(fit6.se) == len(fit6.labels) == 18


def test_history_monotone(fit6):
    h = np.array(fit6.history)
    assert np.all(np.diff(h) <= 1e-12)


def test_just_identified_reproduces_s():
    lam = np.array([0.9, 0.7, 0.5])
    S = np.outer(lam, lam) + np.diag([0.3, 0.5, 0.6])
    data = LogitMatrix.from_logits(exact_moment_data(S, 500, seed=2))
    fit = fit_ml(data, ModelSpec.one_factor(3))
    assert fit.converged and fit.df == 0
    assert fit.T <= 1e-6
    np.testing.assert_allclose(fit.sigma, data.S, atol=1e-6)
    assert np.isnan(chi_square(fit)[2])


def test_nesting_never_lowers_loglik(fit6, sim6):
    for pair in [(0, 1), (2, 5), (3, 4)]:
        bigger = fit_ml(sim6, ModelSpec.one_factor(6, [pair]), start=fit6)
        assert bigger.loglik >= fit6.loglik - 1e-8


def test_permutation_invariance(fit6, sim6):
    order = [3, 0, 5, 1, 4, 2]
    other = fit_ml(sim6.permute(order), ModelSpec.one_factor(6))
    np.testing.assert_allclose(other.params.lam[:, 0], fit6.params.lam[order, 0], atol=1e-8)
    np.testing.assert_allclose(np.diag(other.params.psi), np.diag(fit6.params.psi)[order], atol=1e-8)
    assert other.T == pytest.approx(fit6.T, abs=1e-8)


def test_scale_equivariance(fit6, sim6):
    c = 3.5
    V = sim6.V.copy()
    V[:, 2] *= c
    other = fit_ml(LogitMatrix.from_logits(V), ModelSpec.one_factor(6))
    assert other.params.lam[2, 0] == pytest.approx(c * fit6.params.lam[2, 0], rel=1e-6)
    assert np.sqrt(other.params.psi[2, 2]) == pytest.approx(c * np.sqrt(fit6.params.psi[2, 2]), rel=1e-6)
    a, b = standardize(fit6.params), standardize(other.params)
    np.testing.assert_allclose(a.loadings, b.loadings, atol=1e-6)
    np.testing.assert_allclose(a.residual_variances, b.residual_variances, atol=1e-6)
    np.testing.assert_allclose(a.intercepts, b.intercepts, atol=1e-6)


def test_chi_square_perfect_fit_p_one():
    S = np.diag([1.0, 2.0, 0.5])
    fit = fit_ml(LogitMatrix.from_logits(exact_moment_data(S, 200)), ModelSpec.independence(3))
    T, df, p = chi_square(fit)
    assert T <= 1e-8 and df == 3 and p == pytest.approx(1.0)


def test_chi_square_p_against_quadrature(fit6):
    _, _, p = chi_square(replace(fit6, T=9.0))
    # central chi2(9) density, integrated independently of scipy.stats.chi2
    dens = lambda x: x ** 3.5 * np.exp(-x / 2) / (2 ** 4.5 * gamma(4.5))
    tail, _ = integrate.quad(dens, 9.0, np.inf)
    assert p == pytest.approx(tail, abs=1e-10)
    assert p == pytest.approx(0.437, abs=1e-3)


def test_independence_on_correlated_data_rejects(sim6):
    fit = fit_ml(sim6, ModelSpec.independence(6))
    assert fit.T > 1000 and fit.p_value < 1e-3


def test_single_variance_se_closed_form():
    V = np.random.default_rng(5).normal(0.0, 1.7, size=(400, 1))
    data = LogitMatrix.from_logits(V)
    spec = ModelSpec(np.zeros((1, 0), dtype=bool), frozenset(), np.zeros((0, 0), dtype=bool))
    fit = fit_ml(data, spec, EstimatorOptions(se_method="observed", robust_scaling=False))
    psi = fit.params.psi[0, 0]
    assert psi == pytest.approx(data.S[0, 0], rel=1e-8)
    assert fit.se[1] == pytest.approx(np.sqrt(2 * psi ** 2 / 400), rel=1e-5)
    assert fit.se[0] == pytest.approx(np.sqrt(psi / 400), rel=1e-5)


@pytest.mark.slow
def test_sandwich_close_to_observed_under_normality():
    V, _ = simulate_logits(GenConfig(5000, v1_truth(), seed=21))
    data = LogitMatrix.from_logits(V)
    fit = fit_ml(data, ModelSpec.one_factor(6), EstimatorOptions(robust_scaling=False))
    obs = standard_errors(fit, data, "observed")
    sand = standard_errors(fit, data, "sandwich")
    np.testing.assert_allclose(sand, obs, rtol=0.10)


def test_casewise_scores_match_finite_differences(fit6, sim6):
    sc = casewise_scores(fit6, sim6)
    from psychorank.model import ParamLayout

    layout = ParamLayout(fit6.spec)
    z0 = fit6.estimates()
    rows = sim6.V[:5]

    def logdens(z):
        mu, theta = z[:6], z[6:]
        lam, xi, psi = layout.unpack(theta)
        sig = lam @ xi @ lam.T + psi
        r = rows - mu
        return -0.5 * (np.linalg.slogdet(sig)[1] + np.einsum("ij,jk,ik->i", r, np.linalg.inv(sig), r))

    h = 1e-6
    fd = np.column_stack([(logdens(z0 + e) - logdens(z0 - e)) / (2 * h) for e in np.eye(len(z0)) * h])
    np.testing.assert_allclose(sc[:5], fd, rtol=1e-5, atol=1e-7)
    # scores sum to (nearly) zero at the MLE
    assert np.max(np.abs(sc.sum(axis=0))) < 1e-4 * len(sim6.V)


def test_observed_information_symmetric_pd(fit6, sim6):
    A = observed_information(fit6, sim6)
    np.testing.assert_allclose(A, A.T, atol=1e-10)
    assert np.linalg.eigvalsh(A).min() > 0


def test_every_estimate_has_se(fit6):
    se = fit6.se_dict()
    assert set(se) == set(fit6.labels)
    assert all(np.isfinite(v) and v > 0 for v in se.values())


def test_iteration_limit_reports_nonconvergence(sim6):
    fit = fit_ml(sim6, ModelSpec.one_factor(6), EstimatorOptions(max_iter=1, polish_steps=0))
    assert not fit.converged
    assert fit.message != "converged"
    assert fit.se is None


def test_too_few_observations():
    with pytest.raises(SpecError):
        fit_ml(LogitMatrix.from_logits(np.random.default_rng(0).normal(size=(5, 6))), ModelSpec.one_factor(6))


def test_spec_data_mismatch(sim6):
    with pytest.raises(SpecError):
        fit_ml(sim6, ModelSpec.one_factor(5))


def test_detect_heywood_rules():
    base = one_factor_params([0.5] * 6, psi=np.ones(6))
    assert detect_heywood(base) == []
    neg = ParamSet(base.mu, base.lam, base.xi, np.diag([-0.02, 1, 1, 1, 1, 1]))
    assert detect_heywood(neg) == [0]
    tiny = ParamSet(base.mu, base.lam, base.xi, np.diag([-1e-12, 1, 1, 1, 1, 1]))
    assert detect_heywood(tiny) == []


def test_heywood_fit_is_reported_not_hidden():
    # near-unity standardized loading plus a residual covariance that pushes psi_1 below zero
    lam = np.array([1.003, 0.932, 0.918, 0.652, 0.957, 0.740])
    S = np.outer(lam, lam) + np.diag(1 - np.array([0.997, 0.932, 0.918, 0.652, 0.957, 0.740]) ** 2)
    S[0, 0] = 1.0
    data = LogitMatrix.from_logits(exact_moment_data(S, 1500))
    fit = fit_ml(data, ModelSpec.one_factor(6))
    assert fit.converged
    assert fit.heywood == [0]
    assert fit.params.psi[0, 0] < 0


def test_yb_scaling_near_one_for_normal(sim6, fit6):
    c, Ts = yb_scaling(fit6, sim6)
    assert 0.8 < c < 1.2
    assert Ts == pytest.approx(fit6.T / c)


def test_yb_scaling_inflated_for_heavy_tails():
    V, _ = simulate_logits(GenConfig(3000, v1_truth(), seed=4, residual="student_t"))
    data = LogitMatrix.from_logits(V)
    fit = fit_ml(data, ModelSpec.one_factor(6), EstimatorOptions(compute_se=False))
    assert fit.scaling_c > 1.3


def test_m_minus_one_multiplier(sim6, fit6):
    other = fit_ml(sim6, ModelSpec.one_factor(6), EstimatorOptions(n_multiplier="M-1", compute_se=False))
    assert other.T == pytest.approx(fit6.T * (sim6.n_obs - 1) / sim6.n_obs, rel=1e-8)


def test_implied_sigma_of_fit_positive_definite(fit6):
    assert np.linalg.eigvalsh(implied_sigma(fit6.params)).min() > 0
