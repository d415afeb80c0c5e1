import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.linear_model import LinearRegression
from sklearn.pipeline import make_pipeline

from bayes_surrogate import (
    BasisSpec,
    BayesianSurrogate,
    CovarianceUndefinedError,
    GPRSurrogate,
    Kernel,
    LegendreFeatures,
    TrainingSet,
    build_design_matrix,
    fit,
    predict_mean,
)


@pytest.fixture
def data():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (40, 2))
    y = 1.0 + X[:, 0] - 0.5 * X[:, 1] ** 2 + 0.02 * rng.normal(size=40)
    return X, y


def test_features_match_design_matrix(data):
    X, _ = data
    feats = LegendreFeatures(degree=2).fit(X)
    assert feats.n_output_features_ == 6
    np.testing.assert_array_equal(feats.transform(X), build_design_matrix(feats.spec_, X))


def test_features_explicit_spec(data):
    X, _ = data
    spec = BasisSpec.total_degree([(-1.0, 1.0)] * 2, 1)
    assert LegendreFeatures(spec=spec.to_dict()).fit(X).spec_ == spec


def test_pipeline_matches_bayesian_surrogate(data):
    X, y = data
    pipe = make_pipeline(LegendreFeatures(2), LinearRegression(fit_intercept=False)).fit(X, y)
    model = BayesianSurrogate(degree=2).fit(X, y)
    np.testing.assert_allclose(pipe.predict(X), model.predict(X), rtol=1e-10)


def test_surrogate_matches_functional_api(data):
    X, y = data
    model = BayesianSurrogate(degree=2).fit(X, y)
    post = fit(TrainingSet(X, y), model.spec_)
    np.testing.assert_array_equal(model.predict(X[:5]), predict_mean(post, X[:5])[:, 0])
    assert model.score(X, y) > 0.99


def test_surrogate_std(data):
    X, y = data
    model = BayesianSurrogate(degree=2).fit(X, y)
    _, std = model.predict(X[:3], return_std=True)
    post = model.posterior_
    phi = build_design_matrix(model.spec_, X[:3])
    expected = np.sqrt(post.sigma2_hat * np.einsum("ij,jk,ik->i", phi, post.h_inverse(), phi))
    np.testing.assert_allclose(std, expected, rtol=1e-12)


def test_surrogate_std_undefined():
    X = np.array([[-1.0], [0.0], [1.0]])
    model = BayesianSurrogate(degree=1).fit(X, [0.0, 1.0, 3.0])
    with pytest.raises(CovarianceUndefinedError):
        model.predict(X, return_std=True)


def test_multi_output_shape(data):
    X, y = data
    Y = np.column_stack([y, 2 * y])
    pred = BayesianSurrogate(degree=2).fit(X, Y).predict(X)
    assert pred.shape == (40, 2)


def test_surrogate_propagate(data):
    X, y = data
    model = BayesianSurrogate(degree=2).fit(X, y)
    res = model.propagate(X * 0.5)
    assert res.var_total[0] >= res.var_naive[0]


def test_not_fitted():
    with pytest.raises(NotFittedError):
        BayesianSurrogate().predict([[0.0]])


def test_clone_and_params():
    model = GPRSurrogate(kernel=Kernel(1.0, (0.5,)), degree=0)
    params = clone(model).get_params()
    assert params["degree"] == 0
    assert params["kernel"] == Kernel(1.0, (0.5,))


def test_gpr_surrogate(data):
    X, y = data
    model = GPRSurrogate(kernel={"amplitude2": 0.01, "lengthscales": [0.5, 0.5]}, degree=1).fit(X, y)
    mean, std = model.predict(X[:4], return_std=True)
    assert mean.shape == std.shape == (4,)
    assert np.all(std >= 0)
    assert np.isfinite(model.log_evidence())
    assert model.propagate(X).mean.shape == (1,)
