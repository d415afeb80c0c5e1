"""scikit-learn compatible wrappers.

These estimators expose the library through ``fit`` / ``predict`` /
``transform`` so they compose with pipelines and model-selection tools.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .basis import BasisSpec, as_spec, build_design_matrix, domain_from_samples
from .gpr import Kernel, fit_gpr, gpr_log_evidence, gpr_predictive, propagate_gpr
from .propagate import DEFAULT_EPSILON, InputPosterior, basis_moments, propagate_covariance
from .surrogate import TrainingSet, fit, log_evidence

__all__ = ["LegendreFeatures", "BayesianSurrogate", "GPRSurrogate"]


def _resolve_spec(spec, degree, margin, X) -> BasisSpec:
    if spec is not None:
        return as_spec(spec)
    return BasisSpec.total_degree(domain_from_samples(X, margin), degree)


def _as_outputs(y):
    y = np.asarray(y, dtype=float)
    return (y[:, None], True) if y.ndim == 1 else (y, False)


class LegendreFeatures(TransformerMixin, BaseEstimator):
    """Total-degree Legendre tensor features.

    Parameters
    ----------
    degree : int, default=2
        Maximum total polynomial degree.
    margin : float, default=0.01
        Fraction of each column's range added on both sides of the domain
        learned in ``fit``.
    spec : BasisSpec or dict, optional
        Explicit basis; overrides ``degree`` and ``margin``.

    Attributes
    ----------
    spec_ : BasisSpec
    n_features_in_ : int
    n_output_features_ : int
    """

    def __init__(self, degree=2, margin=0.01, spec=None):
        self.degree = degree
        self.margin = margin
        self.spec = spec

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=1)
        self.spec_ = _resolve_spec(self.spec, self.degree, self.margin, X)
        self.n_features_in_ = X.shape[1]
        self.n_output_features_ = self.spec_.n_basis
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        X = check_array(X)
        return build_design_matrix(self.spec_, X)


class BayesianSurrogate(RegressorMixin, BaseEstimator):
    """Generalized linear Legendre surrogate with closed-form uncertainty.

    ``predict(X, return_std=True)`` returns the coefficient-uncertainty
    standard deviation ``sqrt(sigma2_hat * Phi^T H^-1 Phi)``.

    Parameters
    ----------
    degree : int, default=2
    margin : float, default=0.01
    spec : BasisSpec or dict, optional

    Attributes
    ----------
    posterior_ : CoefficientPosterior
    spec_ : BasisSpec
    coef_ : ndarray of shape (n_basis, n_outputs)
    """

    def __init__(self, degree=2, margin=0.01, spec=None):
        self.degree = degree
        self.margin = margin
        self.spec = spec

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        z, self._single_output = _as_outputs(y)
        self.spec_ = _resolve_spec(self.spec, self.degree, self.margin, X)
        self.training_ = TrainingSet(X, z)
        self.posterior_ = fit(self.training_, self.spec_)
        self.coef_ = self.posterior_.c_hat
        self.n_features_in_ = X.shape[1]
        return self

    def _shape(self, arr):
        return arr[:, 0] if self._single_output else arr

    def predict(self, X, return_std=False):
        check_is_fitted(self, "posterior_")
        X = check_array(X)
        phi = build_design_matrix(self.spec_, X)
        mean = self._shape(phi @ self.coef_)
        if not return_std:
            return mean
        s2 = self.posterior_.require_covariance()
        quad = np.einsum("ij,ji->i", phi, self.posterior_.h_solve(phi.T))
        return mean, np.sqrt(s2 * np.maximum(quad, 0.0))

    def log_evidence(self) -> float:
        check_is_fitted(self, "posterior_")
        return log_evidence(self.training_, self.spec_).log_evidence

    def propagate(self, samples, weights=None, include_surrogate=True, epsilon=DEFAULT_EPSILON):
        """Propagate a weighted input sample; returns a ``PropagationResult``."""
        check_is_fitted(self, "posterior_")
        moments = basis_moments(self.spec_, InputPosterior(check_array(samples), weights))
        return propagate_covariance(self.posterior_, moments, include_surrogate, epsilon)


class GPRSurrogate(RegressorMixin, BaseEstimator):
    """Legendre trend plus squared-exponential Gaussian-process residual.

    Parameters
    ----------
    kernel : Kernel or dict, optional
        Defaults to unit amplitude with lengthscale 0.5 per input.
    degree : int, default=1
    margin : float, default=0.01
    spec : BasisSpec or dict, optional

    Attributes
    ----------
    gpr_posterior_ : GprPosterior
    kernel_ : Kernel
    """

    def __init__(self, kernel=None, degree=1, margin=0.01, spec=None):
        self.kernel = kernel
        self.degree = degree
        self.margin = margin
        self.spec = spec

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        z, self._single_output = _as_outputs(y)
        self.spec_ = _resolve_spec(self.spec, self.degree, self.margin, X)
        if self.kernel is None:
            self.kernel_ = Kernel(1.0, (0.5,) * X.shape[1])
        elif isinstance(self.kernel, dict):
            self.kernel_ = Kernel.from_dict(self.kernel)
        else:
            self.kernel_ = self.kernel
        self.gpr_posterior_ = fit_gpr(TrainingSet(X, z), self.spec_, self.kernel_)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, return_std=False):
        check_is_fitted(self, "gpr_posterior_")
        pred = gpr_predictive(self.gpr_posterior_, check_array(X))
        mean = pred.mean[:, 0] if self._single_output else pred.mean
        if not return_std:
            return mean
        s2 = self.gpr_posterior_.coefficients.require_covariance()
        return mean, np.sqrt(s2 * (pred.kernel_factor + pred.coefficient_factor))

    def log_evidence(self) -> float:
        check_is_fitted(self, "gpr_posterior_")
        return gpr_log_evidence(self.gpr_posterior_).log_evidence

    def propagate(self, samples, weights=None, include_surrogate=True,
                  include_kernel_residual=True, epsilon=DEFAULT_EPSILON):
        check_is_fitted(self, "gpr_posterior_")
        return propagate_gpr(
            self.gpr_posterior_,
            InputPosterior(check_array(samples), weights),
            include_surrogate,
            include_kernel_residual,
            epsilon,
        )
