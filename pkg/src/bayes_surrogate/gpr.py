"""Kernelised surrogate: polynomial trend plus a Gaussian-process residual.

Replacing the white misfit by a kernel covariance ``K_s`` turns ``H_s`` into
``M^T K_s^-1 M`` and ``chi2_min`` into its ``K_s^-1``-weighted analogue.  The
fit whitens the problem with the Cholesky factor of ``K_s`` and then reuses
the plain least-squares machinery, so ``K_s = I`` reproduces the plain
surrogate exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .basis import BasisSpec, build_design_matrix
from .exceptions import (
    AggregateError,
    ContractError,
    CovarianceUndefinedError,
    EvidenceUndefinedError,
    KernelSingularError,
    SurrogateError,
    UnderdeterminedError,
)
from .propagate import (
    DEFAULT_EPSILON,
    InputPosterior,
    PropagationResult,
    assemble_result,
    check_epsilon,
)
from .surrogate import (
    CoefficientPosterior,
    EvidenceReport,
    TrainingSet,
    _evidence_from_posterior,
    fit_design,
)

__all__ = [
    "Kernel",
    "ThetaGrid",
    "GprPosterior",
    "GprPrediction",
    "ThetaMixture",
    "kernel_matrix",
    "fit_gpr",
    "gpr_predictive",
    "gpr_log_evidence",
    "propagate_gpr",
    "marginalize_theta",
    "propagate_gpr_marginal",
]

logger = logging.getLogger(__name__)

DEFAULT_NUGGET_RATIO = 1e-10
PREDICTIVE_CLAMP = 1e-10


@dataclass(frozen=True)
class Kernel:
    """Squared-exponential kernel with per-dimension lengthscales.

    ``k(a, b) = amplitude2 * exp(-0.5 * sum_k ((a_k - b_k) / l_k)^2)``; the
    nugget is added on the diagonal of training-set kernel matrices.  It
    defaults to ``1e-10 * amplitude2``.
    """

    amplitude2: float
    lengthscales: tuple[float, ...]
    nugget: float | None = None
    family: str = "squared_exponential"

    def __post_init__(self):
        if self.family != "squared_exponential":
            raise ContractError(f"unsupported kernel family {self.family!r}")
        amp = float(self.amplitude2)
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        nugget = DEFAULT_NUGGET_RATIO * amp if self.nugget is None else float(self.nugget)
        if not (np.isfinite(amp) and amp > 0):
            raise ContractError(f"amplitude2 must be positive, got {self.amplitude2!r}")
        if not ls or not all(np.isfinite(v) and v > 0 for v in ls):
            raise ContractError(f"lengthscales must be positive, got {self.lengthscales!r}")
        if not (np.isfinite(nugget) and nugget >= 0):
            raise ContractError(f"nugget must be non-negative, got {self.nugget!r}")
        object.__setattr__(self, "amplitude2", amp)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "nugget", nugget)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "amplitude2": self.amplitude2,
            "lengthscales": list(self.lengthscales),
            "nugget": self.nugget,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Kernel":
        try:
            return cls(
                amplitude2=data["amplitude2"],
                lengthscales=data["lengthscales"],
                nugget=data.get("nugget"),
                family=data.get("family", "squared_exponential"),
            )
        except (KeyError, TypeError) as exc:
            raise ContractError(f"malformed kernel: {exc}") from exc


@dataclass(frozen=True)
class ThetaGrid:
    """Discrete prior over kernel hyperparameters."""

    kernels: tuple[Kernel, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        kernels = tuple(self.kernels)
        weights = np.asarray(self.weights, dtype=float)
        if not kernels:
            raise ContractError("theta grid is empty")
        if weights.shape != (len(kernels),):
            raise ContractError("one weight per kernel is required")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise ContractError("theta grid weights must be positive")
        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "weights", tuple(float(w) for w in weights / weights.sum()))

    @classmethod
    def single(cls, kernel: Kernel) -> "ThetaGrid":
        return cls((kernel,), (1.0,))

    def to_dict(self) -> dict:
        return {
            "points": [
                {"kernel": k.to_dict(), "weight": w}
                for k, w in zip(self.kernels, self.weights)
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ThetaGrid":
        try:
            points = data["points"]
            kernels = []
            for p in points:
                kdata = p["kernel"] if "kernel" in p else p
                kernels.append(Kernel.from_dict(kdata))
            return cls(tuple(kernels), tuple(float(p["weight"]) for p in points))
        except (KeyError, TypeError) as exc:
            raise ContractError(f"malformed theta grid: {exc}") from exc


def kernel_matrix(kernel: Kernel, a, b=None) -> np.ndarray:
    """Kernel matrix between point sets ``a`` (m, d) and ``b`` (n, d).

    With ``b`` omitted the symmetric training matrix is returned, nugget
    included on the diagonal.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    same = b is None
    b = a if same else np.atleast_2d(np.asarray(b, dtype=float))
    ls = np.asarray(kernel.lengthscales)
    if a.shape[1] != ls.size or b.shape[1] != ls.size:
        raise ContractError(
            f"points have dimension {a.shape[1]}/{b.shape[1]}, kernel has "
            f"{ls.size} lengthscales"
        )
    diff = (a[:, None, :] - b[None, :, :]) / ls
    k = kernel.amplitude2 * np.exp(-0.5 * np.sum(diff * diff, axis=-1))
    if same:
        k = 0.5 * (k + k.T)
        k[np.diag_indices_from(k)] += kernel.nugget
    return k


@dataclass(frozen=True)
class GprPosterior:
    """Coefficient posterior of the kernelised surrogate at fixed hyperparameters.

    ``coefficients`` holds the whitened fit: its ``c_hat``, ``h_matrix`` and
    ``chi2_min`` are the kernel-weighted ``C_hat~``, ``H~_s`` and
    ``chi2~_min``.
    """

    coefficients: CoefficientPosterior
    k_cholesky: np.ndarray
    kernel: Kernel
    spec: BasisSpec
    train_inputs: np.ndarray
    train_design: np.ndarray
    alpha: np.ndarray  # K_s^-1 (Z - M C~)

    @property
    def c_hat_tilde(self) -> np.ndarray:
        return self.coefficients.c_hat

    @property
    def h_tilde(self) -> np.ndarray:
        return self.coefficients.h_matrix

    @property
    def chi2_tilde_min(self) -> float:
        return self.coefficients.chi2_min

    @property
    def sigma2_hat(self) -> float:
        return self.coefficients.sigma2_hat

    @property
    def logdet_k(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.k_cholesky))))

    def k_solve(self, rhs) -> np.ndarray:
        return linalg.cho_solve((self.k_cholesky, True), rhs)


def fit_gpr(training: TrainingSet, spec: BasisSpec, kernel: Kernel) -> GprPosterior:
    """Fit trend coefficients under the kernel covariance ``K_s``.

    Raises
    ------
    KernelSingularError
        If ``K_s`` (nugget included) has no Cholesky factor.
    SingularDesignError
        If the whitened design is rank deficient.
    """
    if training.n_samples < spec.n_basis:
        raise UnderdeterminedError(
            f"{training.n_samples} training samples cannot determine "
            f"{spec.n_basis} basis coefficients"
        )
    m = build_design_matrix(spec, training.inputs)
    k = kernel_matrix(kernel, training.inputs)
    try:
        lk = linalg.cholesky(k, lower=True)
    except linalg.LinAlgError as exc:
        raise KernelSingularError(
            f"kernel matrix is not positive definite (nugget {kernel.nugget:g}); "
            "increase the nugget"
        ) from exc
    m_w = linalg.solve_triangular(lk, m, lower=True)
    z_w = linalg.solve_triangular(lk, training.outputs, lower=True)
    coeffs = fit_design(
        m_w,
        z_w,
        spec=spec,
        site_labels=training.site_labels,
        param_names=training.param_names,
    )
    resid = training.outputs - m @ coeffs.c_hat
    alpha = linalg.cho_solve((lk, True), resid)
    for arr in (lk, m, alpha):
        arr.setflags(write=False)
    return GprPosterior(
        coefficients=coeffs,
        k_cholesky=lk,
        kernel=kernel,
        spec=spec,
        train_inputs=training.inputs,
        train_design=m,
        alpha=alpha,
    )


def gpr_log_evidence(post: GprPosterior) -> EvidenceReport:
    """Evidence with the substituted ``H~`` and ``chi2~`` plus the kernel term.

    The kernel enters the Gaussian normalisation as ``|K_s|^(-N_x / 2)``,
    reported as the ``neg_half_logdet_K`` component.
    """
    c = post.coefficients
    if c.n_s * c.n_x <= c.n_p * c.n_x:
        raise EvidenceUndefinedError(
            f"evidence needs N_sx > N_bx, got {c.n_s * c.n_x} <= {c.n_p * c.n_x}"
        )
    rep = _evidence_from_posterior(c)
    comps = dict(rep.components)
    comps["neg_half_logdet_K"] = -0.5 * c.n_x * post.logdet_k
    return EvidenceReport(math.fsum(comps.values()), comps, rep.n_sx, rep.n_bx)


@dataclass(frozen=True)
class GprPrediction:
    """Predictive mean plus the two variance factors, per query point.

    The predictive variance of site ``x`` is
    ``sigma2_hat * (kernel_factor + coefficient_factor)``.
    """

    mean: np.ndarray  # (n, N_x)
    kernel_factor: np.ndarray  # (n,)
    coefficient_factor: np.ndarray  # (n,)
    sigma2_hat: float


def gpr_predictive(post: GprPosterior, a) -> GprPrediction:
    """Universal-kriging prediction at one or more parameter vectors.

    mean: ``Phi(a)^T C~ + k_*^T K_s^-1 (Z - M C~)``.
    kernel_factor: ``k(a, a) - k_*^T K_s^-1 k_*``, clamped at zero.
    coefficient_factor: ``u^T H~^-1 u`` with ``u = Phi(a) - M^T K_s^-1 k_*``.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    phi = build_design_matrix(post.spec, a)
    k_star = kernel_matrix(post.kernel, post.train_inputs, a)  # (N_s, n)
    mean = phi @ post.c_hat_tilde + k_star.T @ post.alpha
    v = linalg.solve_triangular(post.k_cholesky, k_star, lower=True)
    kfac = post.kernel.amplitude2 - np.sum(v * v, axis=0)
    if np.any(kfac < -PREDICTIVE_CLAMP * post.kernel.amplitude2):
        raise ContractError("negative predictive kernel variance; kernel matrix is ill-conditioned")
    kfac = np.maximum(kfac, 0.0)
    u = phi - (post.train_design.T @ post.k_solve(k_star)).T  # (n, N_p)
    cfac = np.einsum("ij,ji->i", u, post.coefficients.h_solve(u.T))
    return GprPrediction(mean, kfac, np.maximum(cfac, 0.0), post.sigma2_hat)


def propagate_gpr(
    post: GprPosterior,
    input_posterior: InputPosterior,
    include_surrogate: bool = True,
    include_kernel_residual: bool = True,
    epsilon: float = DEFAULT_EPSILON,
) -> PropagationResult:
    """Propagate the input posterior through the kernelised surrogate.

    ``surrogate_term`` collects the trend-coefficient uncertainty and
    ``kernel_term`` the Gaussian-process residual variance, both averaged over
    the input posterior.  With ``K_s = I`` and ``include_kernel_residual``
    off the result equals the plain-surrogate propagation.
    """
    eps = check_epsilon(epsilon)
    c = post.coefficients
    pred = gpr_predictive(post, input_posterior.samples)
    w = input_posterior.weights
    mean = w @ pred.mean
    second = (pred.mean * w[:, None]).T @ pred.mean
    if not include_surrogate:
        return assemble_result(mean, second, 0.0, eps, site_labels=c.site_labels)
    if not c.covariance_defined:
        naive = assemble_result(mean, second, 0.0, eps, covariance_defined=False, site_labels=c.site_labels)
        raise CovarianceUndefinedError(
            f"surrogate covariance undefined: (N_s - N_p) * N_x = {c.dof} <= 2",
            result=naive,
        )
    coef_term = c.sigma2_hat * float(w @ pred.coefficient_factor)
    kern_term = c.sigma2_hat * float(w @ pred.kernel_factor) if include_kernel_residual else 0.0
    return assemble_result(
        mean, second, coef_term, eps, kernel_term=kern_term, site_labels=c.site_labels
    )


@dataclass(frozen=True)
class ThetaMixture:
    """Mixture over kernel hyperparameters of a (mean, covariance) query."""

    mean: np.ndarray
    cov: np.ndarray
    weights: np.ndarray
    kernels: tuple[Kernel, ...]
    components: tuple
    dropped: tuple[tuple[int, str], ...] = ()


def _fit_grid(training, spec, grid, weighting):
    fits, errors, dropped = [], [], []
    for i, kern in enumerate(grid.kernels):
        try:
            post = fit_gpr(training, spec, kern)
            logw = math.log(grid.weights[i])
            if weighting == "posterior":
                logw += gpr_log_evidence(post).log_evidence
            fits.append((i, post, logw))
        except SurrogateError as exc:
            logger.warning("dropping theta grid point %d: %s", i, exc)
            errors.append(exc)
            dropped.append((i, str(exc)))
    if not fits:
        raise AggregateError("every theta grid point failed", errors=errors)
    logw = np.array([lw for _, _, lw in fits])
    w = np.exp(logw - np.logaddexp.reduce(logw))
    return fits, w, tuple(dropped)


def _mix(values, w):
    means = [np.asarray(m, dtype=float) for m, _ in values]
    covs = [np.asarray(c, dtype=float) for _, c in values]
    mean = sum(wi * m for wi, m in zip(w, means))
    if covs[0].ndim == means[0].ndim + 1:
        spread = sum(wi * np.multiply.outer(m - mean, m - mean) for wi, m in zip(w, means))
    else:
        spread = sum(wi * (m - mean) ** 2 for wi, m in zip(w, means))
    cov = sum(wi * c for wi, c in zip(w, covs)) + spread
    return mean, cov


def marginalize_theta(
    training: TrainingSet,
    spec: BasisSpec,
    grid: ThetaGrid,
    query: Callable[[GprPosterior], tuple],
    weighting: str = "posterior",
) -> ThetaMixture:
    """Mix a per-hyperparameter ``(mean, cov)`` query over the grid.

    ``query`` receives each fitted :class:`GprPosterior` and returns a mean
    and either a covariance matrix or a variance of matching shape.  The
    mixture covariance includes the between-component spread of the means.

    weighting : {"posterior", "prior"}
        ``"posterior"`` multiplies each prior weight by the grid point's
        evidence; ``"prior"`` uses the prior weights alone.
    """
    if weighting not in ("posterior", "prior"):
        raise ContractError(f"unknown weighting {weighting!r}")
    fits, w, dropped = _fit_grid(training, spec, grid, weighting)
    values = [query(post) for _, post, _ in fits]
    mean, cov = _mix(values, w)
    return ThetaMixture(
        mean=mean,
        cov=cov,
        weights=w,
        kernels=tuple(grid.kernels[i] for i, _, _ in fits),
        components=tuple(values),
        dropped=dropped,
    )


def propagate_gpr_marginal(
    training: TrainingSet,
    spec: BasisSpec,
    grid: ThetaGrid,
    input_posterior: InputPosterior,
    include_surrogate: bool = True,
    include_kernel_residual: bool = True,
    epsilon: float = DEFAULT_EPSILON,
    weighting: str = "posterior",
) -> PropagationResult:
    """Hyperparameter-marginalised propagation.

    Each grid point is propagated separately; the mixture adds the spread of
    the per-point means to both the naive and the total covariance.
    """
    eps = check_epsilon(epsilon)
    if weighting not in ("posterior", "prior"):
        raise ContractError(f"unknown weighting {weighting!r}")
    fits, w, _ = _fit_grid(training, spec, grid, weighting)
    results = [
        propagate_gpr(post, input_posterior, include_surrogate, include_kernel_residual, eps)
        for _, post, _ in fits
    ]
    mean, cov_naive = _mix([(r.mean, r.cov_naive) for r in results], w)
    second = cov_naive + np.outer(mean, mean)
    s_term = float(sum(wi * r.surrogate_term for wi, r in zip(w, results)))
    k_term = float(sum(wi * r.kernel_term for wi, r in zip(w, results)))
    return assemble_result(
        mean, second, s_term, eps, kernel_term=k_term, site_labels=training.site_labels
    )
