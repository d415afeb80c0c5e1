"""Bayesian generalized linear surrogates.

Fit a Legendre-basis surrogate to a handful of expensive simulation runs,
obtain the closed-form coefficient posterior and evidence, and propagate an
input-parameter posterior through the surrogate with the surrogate's own
uncertainty included.
"""

from .basis import BasisSpec, build_design_matrix, domain_from_samples, eval_basis
from .estimators import BayesianSurrogate, GPRSurrogate, LegendreFeatures
from .exceptions import (
    AggregateError,
    ContractError,
    CovarianceUndefinedError,
    DomainCoverageError,
    DomainError,
    EvidenceUndefinedError,
    InterpolationDegenerateError,
    KernelSingularError,
    ParseError,
    RefinementError,
    SingularDesignError,
    SurrogateError,
    UnderdeterminedError,
)
from .gpr import Kernel, ThetaGrid, fit_gpr, gpr_log_evidence, gpr_predictive, propagate_gpr
from .propagate import (
    InputPosterior,
    PropagationResult,
    basis_moments,
    propagate_covariance,
    propagate_mean,
    trust_ratio,
)
from .surrogate import (
    CoefficientPosterior,
    TrainingSet,
    compare_models,
    fit,
    log_evidence,
    predict_mean,
    sample_coefficients,
)

__version__ = "0.1.0"

__all__ = [
    "AggregateError",
    "BasisSpec",
    "BayesianSurrogate",
    "CoefficientPosterior",
    "ContractError",
    "CovarianceUndefinedError",
    "DomainCoverageError",
    "DomainError",
    "EvidenceUndefinedError",
    "GPRSurrogate",
    "InputPosterior",
    "InterpolationDegenerateError",
    "Kernel",
    "KernelSingularError",
    "LegendreFeatures",
    "ParseError",
    "PropagationResult",
    "RefinementError",
    "SingularDesignError",
    "SurrogateError",
    "ThetaGrid",
    "TrainingSet",
    "UnderdeterminedError",
    "basis_moments",
    "build_design_matrix",
    "compare_models",
    "domain_from_samples",
    "eval_basis",
    "fit",
    "fit_gpr",
    "gpr_log_evidence",
    "gpr_predictive",
    "log_evidence",
    "predict_mean",
    "propagate_covariance",
    "propagate_gpr",
    "propagate_mean",
    "sample_coefficients",
    "trust_ratio",
]
