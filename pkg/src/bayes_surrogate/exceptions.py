"""Exception hierarchy.

Every error raised deliberately by the package derives from
:class:`SurrogateError`, so callers can catch the whole family at once.
"""


class SurrogateError(Exception):
    """Base class for all package errors."""


class ContractError(SurrogateError, ValueError):
    """Inputs violate a documented precondition (shapes, ranges, types)."""


class ParseError(ContractError):
    """A data file could not be parsed."""


class DomainError(ContractError):
    """A parameter vector lies outside the basis domain."""

    def __init__(self, message, coordinate=None, row=None):
        super().__init__(message)
        self.coordinate = coordinate
        self.row = row


class DomainCoverageError(SurrogateError):
    """Too much input-posterior weight falls outside the basis domain."""


class SingularDesignError(SurrogateError):
    """The design matrix is rank deficient or too badly conditioned."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class UnderdeterminedError(SingularDesignError):
    """Fewer training samples than basis functions."""


class CovarianceUndefinedError(SurrogateError):
    """The coefficient covariance needs (N_s - N_p) * N_x > 2.

    When raised from a propagation call, ``result`` carries the naive
    (surrogate-free) result, which is still well defined.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class EvidenceUndefinedError(SurrogateError):
    """The evidence needs more data values than coefficients."""


class InterpolationDegenerateError(SurrogateError):
    """The surrogate reproduces the training data exactly (chi2_min ~ 0)."""


class KernelSingularError(SurrogateError):
    """The kernel matrix is not positive definite."""


class RefinementError(SurrogateError):
    """A quadrature oracle failed to converge under node doubling."""


class AggregateError(SurrogateError):
    """Every member of a batch (specs, kernel grid points) failed."""

    def __init__(self, message, errors=()):
        super().__init__(message)
        self.errors = list(errors)
