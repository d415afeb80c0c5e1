import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from bayes_surrogate import (
    AggregateError,
    BasisSpec,
    ContractError,
    CovarianceUndefinedError,
    EvidenceUndefinedError,
    InterpolationDegenerateError,
    SingularDesignError,
    TrainingSet,
    UnderdeterminedError,
    build_design_matrix,
    compare_models,
    fit,
    log_evidence,
    predict_mean,
    sample_coefficients,
)
from bayes_surrogate.surrogate import (
    chi2,
    coefficient_covariance,
    coefficient_covariance_matrix,
    fit_design,
    log_evidence_design,
    log_solid_angle,
)

M3 = np.array([[1.0, -1.0], [1.0, 0.0], [1.0, 1.0]])


# chi2


def test_chi2_zero_for_exact_coefficients():
    ts = TrainingSet([[-1.0], [0.0], [1.0]], [[0.0], [1.0], [2.0]])
    assert chi2(ts, M3, [[1.0], [1.0]]) == 0.0


def test_chi2_hand_residuals():
    ts = TrainingSet([[-1.0], [0.0], [1.0]], [[0.0], [1.0], [3.0]])
    assert chi2(ts, M3, [[4 / 3], [3 / 2]]) == pytest.approx(1 / 6, rel=1e-14)


def test_chi2_shape_mismatch():
    ts = TrainingSet([[-1.0], [0.0], [1.0]], [[0.0], [1.0], [3.0]])
    with pytest.raises(ContractError):
        chi2(ts, M3[:2], [[1.0], [1.0]])


# fit


def test_fit_linear_three_points(linear3, linear_spec):
    post = fit(linear3, linear_spec)
    np.testing.assert_allclose(post.c_hat[:, 0], [1.0, 1.0], rtol=1e-12)
    assert post.chi2_min == pytest.approx(0.0, abs=1e-28)


def test_fit_quadratic_data_by_line(quad5, linear_spec):
    post = fit(quad5, linear_spec)
    np.testing.assert_allclose(post.c_hat[:, 0], [0.5, 0.0], atol=1e-15)
    assert post.chi2_min == pytest.approx(0.875, rel=1e-12)
    assert post.sigma2_hat == pytest.approx(0.875, rel=1e-12)
    np.testing.assert_allclose(post.h_matrix, np.diag([5.0, 2.5]), atol=1e-14)


def test_fit_zero_data(linear_spec):
    post = fit(TrainingSet([[-1.0], [0.2], [1.0]], [0.0, 0.0, 0.0]), linear_spec)
    assert np.all(post.c_hat == 0.0)
    assert post.chi2_min == 0.0


def test_fit_underdetermined(linear_spec):
    with pytest.raises(UnderdeterminedError):
        fit(TrainingSet([[0.3]], [1.0]), linear_spec)


def test_fit_duplicate_inputs_singular(linear_spec):
    with pytest.raises(SingularDesignError) as info:
        fit(TrainingSet([[0.3], [0.3], [0.3]], [1.0, 2.0, 3.0]), linear_spec)
    assert 1 in info.value.columns or 0 in info.value.columns


def test_fit_rejects_non_finite(linear_spec):
    with pytest.raises(ContractError):
        TrainingSet([[0.0], [1.0]], [1.0, np.inf])


def test_fit_matches_lstsq():
    rng = np.random.default_rng(1)
    spec = BasisSpec.total_degree([(-1.0, 1.0)] * 3, 2)
    a = rng.uniform(-1, 1, (25, 3))
    z = rng.normal(size=(25, 4))
    post = fit(TrainingSet(a, z), spec)
    ref, res, *_ = np.linalg.lstsq(build_design_matrix(spec, a), z, rcond=None)
    np.testing.assert_allclose(post.c_hat, ref, rtol=1e-10, atol=1e-12)
    assert post.chi2_min == pytest.approx(res.sum(), rel=1e-10)


# covariance


def test_cross_site_covariance_is_zero():
    rng = np.random.default_rng(2)
    ts = TrainingSet(rng.uniform(-1, 1, (9, 1)), rng.normal(size=(9, 3)))
    post = fit(ts, BasisSpec.total_degree([(-1.0, 1.0)], 2))
    for nu in range(3):
        for nu_p in range(3):
            assert coefficient_covariance(post, nu, 0, nu_p, 2) == 0.0
    full = coefficient_covariance_matrix(post)
    assert np.all(full[:3, 3:] == 0.0)


def test_covariance_hand_value(quad5, linear_spec):
    post = fit(quad5, linear_spec)
    assert coefficient_covariance(post, 0, 0, 0, 0) == pytest.approx(0.175, rel=1e-12)


def test_covariance_undefined_three_points(linear3, linear_spec):
    post = fit(linear3, linear_spec)
    assert math.isnan(post.sigma2_hat)
    with pytest.raises(CovarianceUndefinedError):
        coefficient_covariance(post, 0, 0, 0, 0)


# evidence


def test_solid_angle_two_dims():
    assert log_solid_angle(2) == pytest.approx(math.log(2 * math.pi), rel=1e-15)


def test_evidence_against_one_dimensional_quadrature():
    """One coefficient, three samples, chi2_min = 0.5 and H = 3."""
    m = np.ones((3, 1))
    z = np.array([[0.5], [1.0], [1.5]])
    rep = log_evidence_design(m, z)
    val, _ = quad(lambda c: np.sum((z[:, 0] - c) ** 2) ** -1.5, -np.inf, np.inf, epsrel=1e-13)
    # the improper coefficient prior leaves a constant factor of one half
    assert val / math.exp(rep.log_evidence) == pytest.approx(0.5, rel=1e-10)


def test_evidence_components_sum(quad5, linear_spec):
    rep = log_evidence(quad5, linear_spec)
    assert rep.log_evidence == pytest.approx(math.fsum(rep.components.values()), abs=0)
    assert (rep.n_sx, rep.n_bx) == (5, 2)


def test_evidence_undefined_gate(linear_spec):
    with pytest.raises(EvidenceUndefinedError):
        log_evidence(TrainingSet([[-1.0], [1.0]], [0.0, 1.0]), linear_spec)


def test_evidence_exact_fit_is_degenerate(linear_spec):
    ts = TrainingSet([[-1.0], [0.0], [1.0]], [0.0, 0.0, 0.0])
    with pytest.raises(InterpolationDegenerateError):
        log_evidence(ts, linear_spec)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_evidence_basis_recombination_shift(seed, n_x):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(10, 3))
    z = rng.normal(size=(10, n_x))
    t = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    base = log_evidence_design(m, z).log_evidence
    moved = log_evidence_design(m @ t, z).log_evidence
    shift = -n_x * math.log(abs(np.linalg.det(t)))
    assert moved - base == pytest.approx(shift, abs=1e-10)


# predict


def test_predict_constant_basis():
    spec = BasisSpec(((0,),), ((-1.0, 1.0),))
    post = fit(TrainingSet([[-0.5], [0.5]], [2.0, 4.0]), spec)
    np.testing.assert_allclose(predict_mean(post, np.array([[0.9], [-0.1]]))[:, 0], 3.0)


def test_predict_linear(linear3, linear_spec):
    post = fit(linear3, linear_spec)
    assert predict_mean(post, np.array([0.5]))[0] == pytest.approx(1.5, rel=1e-12)


def test_predict_interpolates_training_data():
    rng = np.random.default_rng(4)
    spec = BasisSpec.total_degree([(-1.0, 1.0)] * 2, 2)
    a = rng.uniform(-1, 1, (6, 2))
    z = rng.normal(size=6)
    post = fit(TrainingSet(a, z), spec)
    np.testing.assert_allclose(predict_mean(post, a)[:, 0], z, rtol=1e-12)


# model comparison


def test_compare_identical_specs(quad5, linear_spec):
    scores = compare_models(quad5, [linear_spec, linear_spec])
    assert scores[0].log_evidence == scores[1].log_evidence
    assert [s.probability for s in scores] == pytest.approx([0.5, 0.5])


def test_compare_prefers_generating_degree():
    rng = np.random.default_rng(5)
    a = rng.uniform(-1, 1, (40, 2))
    true = BasisSpec.total_degree([(-1.0, 1.0)] * 2, 2)
    z = build_design_matrix(true, a) @ rng.normal(size=6)
    z += 0.01 * z.std() * rng.normal(size=40)
    specs = [BasisSpec.total_degree([(-1.0, 1.0)] * 2, d) for d in range(5)]
    scores = compare_models(TrainingSet(a, z), specs)
    assert scores[0].spec_id == 2


def test_compare_excludes_invalid_spec(quad5):
    specs = [BasisSpec.total_degree([(-1.0, 1.0)], d) for d in (0, 1, 4)]
    scores = compare_models(quad5, specs)
    assert [s.status for s in scores][-1] == "evidence-undefined"
    assert scores[-1].spec_id == 2
    assert sum(s.probability for s in scores) == pytest.approx(1.0)


def test_compare_all_invalid():
    ts = TrainingSet([[-1.0], [1.0]], [0.0, 1.0])
    with pytest.raises(AggregateError):
        compare_models(ts, [BasisSpec.total_degree([(-1.0, 1.0)], 3)])


def test_compare_thread_count_does_not_matter(quad5):
    specs = [BasisSpec.total_degree([(-1.0, 1.0)], d) for d in range(3)]
    one = compare_models(quad5, specs, n_threads=1)
    four = compare_models(quad5, specs, n_threads=4)
    assert [(s.spec_id, s.log_evidence) for s in one] == [(s.spec_id, s.log_evidence) for s in four]


# sampling


def test_sample_zero_draws(quad5, linear_spec):
    assert sample_coefficients(fit(quad5, linear_spec), 0, seed=0).shape == (0, 2, 1)


def test_sample_moments(linear_spec):
    rng = np.random.default_rng(6)
    a = np.linspace(-1, 1, 12)
    ts = TrainingSet(a[:, None], (a**2 + 0.1 * rng.normal(size=12))[:, None])
    post = fit(ts, linear_spec)
    draws = sample_coefficients(post, 1_000_000, seed=1)[:, :, 0]
    se = draws.std(axis=0) / 1000.0
    assert np.all(np.abs(draws.mean(axis=0) - post.c_hat[:, 0]) < 4 * se)
    ref = coefficient_covariance_matrix(post)
    scale = np.sqrt(np.outer(np.diag(ref), np.diag(ref)))
    assert np.max(np.abs(np.cov(draws.T) - ref) / scale) < 0.02


def test_sample_requires_covariance(linear3, linear_spec):
    with pytest.raises(CovarianceUndefinedError):
        sample_coefficients(fit(linear3, linear_spec), 5, seed=0)


def test_fit_design_accepts_any_design():
    post = fit_design(M3, [[0.0], [1.0], [3.0]])
    np.testing.assert_allclose(post.c_hat[:, 0], [4 / 3, 3 / 2], rtol=1e-13)
    assert post.chi2_min == pytest.approx(1 / 6, rel=1e-13)
