import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from psychorank.model import (
    LOG_2PI,
    ModelSpec,
    ParamLayout,
    ParamSet,
    SingularCovarianceError,
    SpecError,
    implied_sigma,
    log_likelihood,
    model_df,
    standardize,
)


def _ps(lam, psi, mu=None, xi=None):
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    if lam.shape[0] == 1 and np.asarray(psi).shape[0] != 1:
        lam = lam.T
    p, f = lam.shape
    return ParamSet(np.zeros(p) if mu is None else mu, lam, np.eye(f) if xi is None else xi, np.asarray(psi, float))


def test_implied_sigma_pure_noise():
    assert np.array_equal(implied_sigma(_ps(np.zeros((2, 1)), np.eye(2))), np.eye(2))


def test_implied_sigma_hand_products():
    assert np.array_equal(implied_sigma(_ps([[1.0], [1.0]], np.eye(2))), [[2, 1], [1, 2]])
    psi = np.array([[1.0, 0.5], [0.5, 1.0]])
    assert np.array_equal(implied_sigma(_ps([[1.0], [1.0]], psi)), [[2, 1.5], [1.5, 2]])


@settings(max_examples=50)
@given(arrays(float, (5, 2), elements=st.floats(-3, 3)), arrays(float, 5, elements=st.floats(0, 2)),
       st.floats(-0.9, 0.9))
def test_implied_sigma_symmetric_and_psd(lam, psi_diag, r):
    xi = np.array([[1.0, r], [r, 1.0]])
    sigma = implied_sigma(ParamSet(np.zeros(5), lam, xi, np.diag(psi_diag)))
    assert np.array_equal(sigma, sigma.T)
    assert np.linalg.eigvalsh(sigma).min() >= -1e-9 * max(1.0, np.abs(sigma).max())


def test_loglik_saturated_closed_form():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((4, 4))
    S = A @ A.T + np.eye(4)
    k = rng.standard_normal(4)
    m = 37
    ll = log_likelihood(ParamSet(k, np.zeros((4, 1)), np.eye(1), S), (k, S), m)
    expected = -(m / 2) * (4 * LOG_2PI + np.linalg.slogdet(S)[1] + 4)
    assert ll == pytest.approx(expected, rel=1e-12)


def test_loglik_scalar_case():
    ll = log_likelihood(ParamSet([0.3], np.zeros((1, 1)), np.eye(1), [[1.0]]), ([0.3], [[1.0]]), 2)
    assert ll == pytest.approx(-(np.log(2 * np.pi) + 1.0), rel=1e-14)


def test_loglik_mean_shift_decreases():
    S = np.array([[2.0, 0.5], [0.5, 1.0]])
    k = np.array([0.1, -0.2])
    base = log_likelihood(ParamSet(k, np.zeros((2, 1)), np.eye(1), S), (k, S), 10)
    for step in (0.01, 0.1, 1.0):
        shifted = log_likelihood(ParamSet(k + step, np.zeros((2, 1)), np.eye(1), S), (k, S), 10)
        assert shifted < base


def test_loglik_saturated_is_global_max():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((3, 3))
    S = A @ A.T + 0.5 * np.eye(3)
    k = np.zeros(3)
    best = log_likelihood(ParamSet(k, np.zeros((3, 1)), np.eye(1), S), (k, S), 50)
    for _ in range(200):
        E = rng.standard_normal((3, 3)) * 0.2
        sig = S + E @ E.T * rng.choice([-1, 1]) * 0.5
        if np.linalg.eigvalsh(sig).min() <= 0:
            continue
        assert log_likelihood(ParamSet(k, np.zeros((3, 1)), np.eye(1), sig), (k, S), 50) <= best


def test_loglik_singular_sigma_reports_condition():
    with pytest.raises(SingularCovarianceError, match="reciprocal condition number"):
        log_likelihood(_ps([[1.0], [1.0]], np.zeros((2, 2))), (np.zeros(2), np.eye(2)), 5)


@pytest.mark.parametrize("spec, expected", [
    (ModelSpec.one_factor(6), 9),
    (ModelSpec.independence(6), 15),
    (ModelSpec.one_factor(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]), 4),
    (ModelSpec.one_factor(3), 0),
])
def test_model_df(spec, expected):
    assert model_df(spec, spec.n_vars) == expected


def test_model_df_over_parameterised():
    with pytest.raises(SpecError):
        model_df(ModelSpec.one_factor(3, [(0, 1)]))


def test_standardize_v1_arc_row():
    params = ParamSet([54.003], [[13.928]], np.eye(1), [[1.017]])
    s = standardize(params)
    assert s.loadings[0, 0] == pytest.approx(0.997, abs=1e-3)
    assert s.intercepts[0] == pytest.approx(3.867, abs=1e-3)
    assert s.residual_variances[0] == pytest.approx(0.005, abs=1e-3)


def test_standardize_residual_correlation_v1_revised():
    psi = np.array([[34.033, -24.601], [-24.601, 55.834]])
    s = standardize(ParamSet([73.862, 49.589], [[15.277], [6.489]], np.eye(1), psi))
    assert s.residual_correlations[(0, 1)] == pytest.approx(-0.564, abs=1e-3)


def test_standardize_noiseless_indicator():
    assert standardize(ParamSet([0.0], [[1.0]], np.eye(1), [[0.0]])).loadings[0, 0] == 1.0


def test_standardize_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        standardize(ParamSet([0.0], [[0.0]], np.eye(1), [[0.0]]))


def test_spec_validation():
    with pytest.raises(SpecError):
        ModelSpec.one_factor(3, [(1, 1)])
    with pytest.raises(SpecError):
        ModelSpec.one_factor(3, [(0, 1), (1, 0)])
    spec = ModelSpec.one_factor(3, [(2, 0)])
    assert spec.residual_pairs == [(0, 2)]
    with pytest.raises(SpecError):
        spec.with_residual_cov(0, 2)


def test_spec_serialisation_round_trip():
    names = ["A", "B", "C", "D"]
    pat = np.array([[1, 0], [1, 0], [0, 1], [0, 1]], dtype=bool)
    spec = ModelSpec(pat, frozenset({(0, 3)}), np.array([[0, 1], [1, 0]], dtype=bool))
    back = ModelSpec.loads(spec.dumps(names), names)
    assert np.array_equal(back.loading_pattern, spec.loading_pattern)
    assert back.free_residual_cov == spec.free_residual_cov
    assert np.array_equal(back.factor_cov_free, spec.factor_cov_free)
    by_default = ModelSpec.from_dict({"residual_covariances": [["B", "A"]]}, names)
    assert by_default.n_factors == 1 and by_default.loading_pattern.all()
    assert by_default.residual_pairs == [(0, 1)]


def test_layout_pack_unpack_round_trip():
    pat = np.array([[1, 0], [1, 1], [0, 1]], dtype=bool)
    spec = ModelSpec(pat, frozenset({(0, 2)}), np.array([[0, 1], [1, 0]], dtype=bool))
    lay = ParamLayout(spec)
    theta = np.arange(1, lay.size + 1) / 10.0
    lam, xi, psi = lay.unpack(theta)
    assert np.array_equal(lay.pack(lam, xi, psi), theta)
    assert len(lay.labels()) == lay.size


def test_layout_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    pat = np.array([[1, 0], [1, 1], [0, 1], [1, 0]], dtype=bool)
    spec = ModelSpec(pat, frozenset({(0, 3), (1, 2)}), np.array([[0, 1], [1, 0]], dtype=bool))
    lay = ParamLayout(spec)
    A = rng.standard_normal((4, 4))
    S = A @ A.T + np.eye(4)

    def F(theta):
        lam, xi, psi = lay.unpack(theta)
        sig = lam @ xi @ lam.T + psi
        return np.linalg.slogdet(sig)[1] + np.trace(S @ np.linalg.inv(sig))

    theta = np.r_[rng.uniform(0.5, 1.0, int(pat.sum())), rng.uniform(1.0, 2.0, 4), [0.1, -0.2], [0.3]]
    lam, xi, psi = lay.unpack(theta)
    sinv = np.linalg.inv(lam @ xi @ lam.T + psi)
    g = lay.grad_from_dsigma(sinv - sinv @ S @ sinv, lam, xi)
    fd = np.array([(F(theta + h) - F(theta - h)) / 2e-6 for h in np.eye(lay.size) * 1e-6])
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)
