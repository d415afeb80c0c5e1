import json
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import legendre as npleg

from bayes_surrogate import BasisSpec, ContractError, DomainError, build_design_matrix, eval_basis
from bayes_surrogate.basis import (
    design_matrix_clamped,
    domain_from_samples,
    legendre_table,
    to_reference,
    total_degree_index_set,
)


def test_index_set_univariate():
    assert total_degree_index_set(1, 2) == [(0,), (1,), (2,)]


def test_index_set_two_params_graded_order():
    assert total_degree_index_set(2, 2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]


def test_index_set_four_params_degree_two():
    assert len(total_degree_index_set(4, 2)) == 15


@given(st.integers(1, 5), st.integers(0, 4))
def test_index_set_size_is_binomial(n_params, degree):
    idx = total_degree_index_set(n_params, degree)
    assert len(idx) == comb(n_params + degree, degree)
    assert len(set(idx)) == len(idx)
    assert idx[0] == (0,) * n_params
    assert all(sum(i) <= degree for i in idx)


def test_constant_function_is_one():
    spec = BasisSpec.total_degree([(0.0, 3.0), (-2.0, 5.0)], 2)
    assert eval_basis(spec, np.array([1.7, -0.3]))[0] == 1.0


def test_p1_vanishes_at_midpoint():
    spec = BasisSpec(((0,), (1,)), ((2.0, 6.0),))
    assert eval_basis(spec, np.array([4.0]))[1] == 0.0


def test_p2_is_one_at_upper_edge():
    spec = BasisSpec(((0,), (1,), (2,)), ((2.0, 6.0),))
    assert eval_basis(spec, np.array([6.0]))[2] == 1.0


def test_design_matrix_three_points(linear_spec):
    m = build_design_matrix(linear_spec, [[-1.0], [0.0], [1.0]])
    np.testing.assert_array_equal(m, [[1, -1], [1, 0], [1, 1]])


def test_design_matrix_empty(linear_spec):
    m = build_design_matrix(linear_spec, np.empty((0, 1)))
    assert m.shape == (0, 2)


def test_design_matrix_shape_and_constant_column():
    spec = BasisSpec.total_degree([(-1.0, 1.0)] * 4, 2)
    a = np.random.default_rng(3).uniform(-1, 1, (100, 4))
    m = build_design_matrix(spec, a)
    assert m.shape == (100, 15)
    np.testing.assert_array_equal(m[:, 0], 1.0)
    # every row equals single-point evaluation
    for i in (0, 57, 99):
        np.testing.assert_array_equal(m[i], eval_basis(spec, a[i]))


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=20), st.integers(0, 8))
def test_recurrence_matches_numpy_legendre(xs, degree):
    x = np.array(xs)
    table = legendre_table(x, degree)
    for n in range(degree + 1):
        coef = np.zeros(n + 1)
        coef[n] = 1.0
        np.testing.assert_allclose(table[..., n], npleg.legval(x, coef), atol=1e-13)


def test_orthogonality_under_exact_uniform_rule():
    spec = BasisSpec.total_degree([(-1.0, 1.0)] * 2, 3)
    x, w = npleg.leggauss(6)
    grid = np.array([(u, v) for u in x for v in x])
    weights = np.array([wu * wv for wu in w for wv in w]) / 4.0
    m = build_design_matrix(spec, grid)
    gram = (m * weights[:, None]).T @ m
    expected = np.diag([1.0 / np.prod([2 * k + 1 for k in idx]) for idx in spec.indices])
    np.testing.assert_allclose(gram, expected, atol=1e-14)


def test_outside_domain_raises_with_location(linear_spec):
    with pytest.raises(DomainError) as info:
        build_design_matrix(linear_spec, [[0.0], [1.5]])
    assert info.value.row == 1
    assert info.value.coordinate == 0


def test_roundoff_overshoot_is_clamped(linear_spec):
    m = build_design_matrix(linear_spec, [[1.0 + 1e-14]])
    assert m[0, 1] == 1.0


def test_clamped_design_reports_rows(linear_spec):
    m, outside = design_matrix_clamped(linear_spec, [[0.0], [3.0]])
    np.testing.assert_array_equal(outside, [False, True])
    assert m[1, 1] == 1.0


def test_non_finite_sample_rejected(linear_spec):
    with pytest.raises(DomainError):
        to_reference(linear_spec, [[np.nan]])


def test_spec_validation():
    with pytest.raises(ContractError):
        BasisSpec(((1,), (0,)), ((-1.0, 1.0),))  # constant must come first
    with pytest.raises(ContractError):
        BasisSpec(((0,), (1,), (1,)), ((-1.0, 1.0),))
    with pytest.raises(ContractError):
        BasisSpec(((0,), (1,)), ((1.0, 1.0),))


def test_spec_json_round_trip():
    spec = BasisSpec.total_degree([(-1.0, 2.5), (0.1, 0.2)], 3)
    again = BasisSpec.from_dict(json.loads(spec.to_json()))
    assert again == spec
    assert set(spec.to_dict()) == {"family", "indices", "domain"}


def test_domain_from_samples_margin():
    dom = domain_from_samples([[0.0, 5.0], [10.0, 5.0]], margin=0.01)
    assert dom[0] == pytest.approx((-0.1, 10.1))
    assert dom[1] == (4.5, 5.5)


@settings(max_examples=50)
@given(st.floats(-50, 50), st.floats(0.1, 100), st.integers(1, 5))
def test_affine_map_invariance(lo, width, degree):
    """The basis on [lo, lo+w] at the image of xi equals the basis on [-1,1] at xi."""
    xi = np.linspace(-1, 1, 7)[:, None]
    ref = BasisSpec.total_degree([(-1.0, 1.0)], degree)
    moved = BasisSpec.total_degree([(lo, lo + width)], degree)
    a = lo + (xi + 1.0) * width / 2.0
    np.testing.assert_allclose(build_design_matrix(moved, a), build_design_matrix(ref, xi), atol=1e-9)
