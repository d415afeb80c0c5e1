import math

import numpy as np
import pytest

from bayes_surrogate import BasisSpec, ContractError, TrainingSet, build_design_matrix, fit, log_evidence
from bayes_surrogate.oracle import (
    TOY_N_PARAMS,
    QuadratureGrid,
    make_quadrature_grid,
    monte_carlo_propagation,
    projector_chi2,
    quadrature_posterior_moments,
    riemann_prior_check,
    toy_simulator,
)
from bayes_surrogate.propagate import InputPosterior, basis_moments, propagate_covariance
from bayes_surrogate.surrogate import coefficient_covariance_matrix
from bayes_surrogate.verify import random_instance


@pytest.fixture
def one_coefficient():
    rng = np.random.default_rng(0)
    a = rng.uniform(-1, 1, (4, 1))
    spec = BasisSpec(((0,),), ((-1.0, 1.0),))
    return TrainingSet(a, 1.3 + 0.4 * rng.normal(size=4)), spec


def test_quadrature_mean_and_covariance(one_coefficient):
    ts, spec = one_coefficient
    post = fit(ts, spec)
    q = quadrature_posterior_moments(ts, build_design_matrix(spec, ts.inputs))
    assert q.mean[0] == pytest.approx(post.c_hat[0, 0], rel=1e-6)
    assert q.cov[0, 0] == pytest.approx(coefficient_covariance_matrix(post)[0, 0], rel=1e-5)


def test_quadrature_norm_ratio_matches_evidence_ratio(one_coefficient):
    ts, spec = one_coefficient
    other = TrainingSet(ts.inputs, ts.outputs * 1.7 + 0.2 * np.arange(4)[:, None])
    m = build_design_matrix(spec, ts.inputs)
    d_quad = quadrature_posterior_moments(ts, m).log_norm - quadrature_posterior_moments(other, m).log_norm
    d_ev = log_evidence(ts, spec).log_evidence - log_evidence(other, spec).log_evidence
    assert math.exp(d_quad - d_ev) == pytest.approx(1.0, rel=1e-5)


def test_quadrature_dimension_guard():
    ts, spec = random_instance(0, 10, 4, 1)
    with pytest.raises(ContractError):
        quadrature_posterior_moments(ts, build_design_matrix(spec, ts.inputs))


def test_quadrature_dof_guard():
    ts, spec = random_instance(0, 3, 1, 1)
    with pytest.raises(ContractError):
        quadrature_posterior_moments(ts, build_design_matrix(spec, ts.inputs))


def test_grid_covers_eight_std(one_coefficient):
    ts, spec = one_coefficient
    grid = make_quadrature_grid(ts, build_design_matrix(spec, ts.inputs))
    assert np.all(grid.half_width >= 8 * grid.scale)
    assert grid.n_nodes % 2 == 1


def test_grid_node_guard():
    with pytest.raises(ContractError):
        QuadratureGrid(np.zeros(3), np.ones(3), np.full(3, 3.0), 1001)


def test_projector_chi2_agrees():
    ts, spec = random_instance(3, 12, 3, 2)
    post = fit(ts, spec)
    assert projector_chi2(ts, build_design_matrix(spec, ts.inputs)) == pytest.approx(post.chi2_min, rel=1e-12)


def test_riemann_prior_constant():
    spec = BasisSpec.total_degree([(-1.0, 1.0)], 2)
    rng = np.random.default_rng(1)
    samples = rng.uniform(-1, 1, (6, 1))
    res = riemann_prior_check(spec, samples, [np.zeros((3, 1)), 5 * rng.normal(size=(3, 1))])
    assert res.spread <= 1e-8
    assert not res.singular
    m = build_design_matrix(spec, samples)
    np.testing.assert_allclose(res.r_closed, m.T @ m, rtol=1e-12)
    assert res.max_rel_diff <= 1e-8


def test_riemann_singular_when_underdetermined():
    spec = BasisSpec.total_degree([(-1.0, 1.0)], 3)
    res = riemann_prior_check(spec, [[-0.5], [0.5]], [np.zeros((4, 1)), np.ones((4, 1))])
    assert res.singular


def test_riemann_needs_two_points():
    spec = BasisSpec.total_degree([(-1.0, 1.0)], 1)
    with pytest.raises(ContractError):
        riemann_prior_check(spec, [[-0.5], [0.5], [0.1]], [np.zeros((2, 1))])


def test_monte_carlo_matches_closed_form():
    ts, spec = random_instance(7, 14, 3, 1)
    post = fit(ts, spec)
    inputs = InputPosterior(np.linspace(-0.9, 0.9, 50)[:, None])
    res = propagate_covariance(post, basis_moments(spec, inputs))
    mc = monte_carlo_propagation(post, inputs, n_draws=200_000, seed=3)
    assert abs(mc.mean[0] - res.mean[0]) < 3 * mc.mean_se[0]
    assert abs(mc.var[0] - res.var_total[0]) < 3 * mc.var_se[0]


# toy simulator


def test_toy_exactly_quadratic_at_first_time():
    rng = np.random.default_rng(2)
    a = rng.uniform(-1, 1, (40, TOY_N_PARAMS))
    spec = BasisSpec.total_degree([(-1.0, 1.0)] * TOY_N_PARAMS, 2)
    z = np.column_stack([toy_simulator(a, 0, 50, site) for site in range(2)])
    post = fit(TrainingSet(a, z), spec)
    assert post.chi2_min < 1e-24 * np.sum(z**2)


def test_toy_constant_at_origin():
    values = [toy_simulator(np.zeros(TOY_N_PARAMS), t, 50, site) for t in range(50) for site in (0, 1)]
    assert len(set(float(v) for v in values)) == 1


def test_toy_misfit_grows():
    rng = np.random.default_rng(3)
    a = rng.uniform(-1, 1, (60, TOY_N_PARAMS))
    spec = BasisSpec.total_degree([(-1.0, 1.0)] * TOY_N_PARAMS, 2)
    chi = [fit(TrainingSet(a, toy_simulator(a, t, 50)), spec).chi2_min for t in (0, 10, 25, 49)]
    assert chi == sorted(chi)
    assert chi[-1] > 0


def test_toy_batch_matches_single():
    a = np.array([[0.1, -0.2, 0.3, -0.4], [0.9, 0.8, -0.7, 0.6]])
    batch = toy_simulator(a, 17, 50, 1)
    assert batch.shape == (2,)
    assert batch[1] == toy_simulator(a[1], 17, 50, 1)


@pytest.mark.parametrize(
    "a, t",
    [(np.full(4, 1.5), 0), (np.zeros(3), 0), (np.zeros(4), 50), (np.zeros(4), -1)],
)
def test_toy_rejects_bad_input(a, t):
    with pytest.raises(ContractError):
        toy_simulator(a, t, 50)
