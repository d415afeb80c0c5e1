"""Propagation of input-parameter uncertainty through a fitted surrogate.

The input posterior is a weighted sample.  Everything the propagation needs
from it reduces to two basis moments,

    g_nu      = sum_j w_j Phi_nu(a_j)
    G_nu,nu'  = sum_j w_j Phi_nu(a_j) Phi_nu'(a_j),

after which the mean, the naive covariance and the surrogate-uncertainty
term are small matrix expressions in ``C_hat``, ``H_s`` and ``sigma2_hat``.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .basis import BasisSpec, check_same_spec, design_matrix_clamped
from .exceptions import (
    ContractError,
    CovarianceUndefinedError,
    DomainCoverageError,
)
from .surrogate import CoefficientPosterior

__all__ = [
    "InputPosterior",
    "BasisMoments",
    "PropagationResult",
    "basis_moments",
    "propagate_mean",
    "propagate_covariance",
    "trust_ratio",
    "flatten_spacetime",
    "unflatten_spacetime",
    "default_threads",
]

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-3
MAX_CLAMPED_WEIGHT = 0.01
CHUNK_ROWS = 4096
THREADS_ENV = "BAYES_SURROGATE_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class InputPosterior:
    """Weighted sample representation of the input-parameter posterior.

    Weights are renormalised; a deviation of the sum from one by more than
    1e-6 is logged as a warning.
    """

    samples: np.ndarray
    weights: np.ndarray | None = None
    param_names: tuple[str, ...] = ()

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise ContractError("input posterior needs a non-empty (N_j, N_a) sample")
        if not np.all(np.isfinite(samples)):
            raise ContractError("input posterior samples must be finite")
        if self.weights is None:
            weights = np.full(samples.shape[0], 1.0 / samples.shape[0])
        else:
            weights = np.asarray(self.weights, dtype=float).ravel()
            if weights.shape[0] != samples.shape[0]:
                raise ContractError(
                    f"{weights.shape[0]} weights for {samples.shape[0]} samples"
                )
            if not np.all(np.isfinite(weights)) or np.any(weights < 0):
                raise ContractError("weights must be finite and non-negative")
            total = weights.sum()
            if total <= 0:
                raise ContractError("weights sum to zero")
            if abs(total - 1.0) > 1e-6:
                logger.warning("input posterior weights sum to %.17g; renormalising", total)
            weights = weights / total
        samples.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "param_names", tuple(self.param_names))

    @classmethod
    def point_mass(cls, a) -> "InputPosterior":
        return cls(np.atleast_2d(np.asarray(a, dtype=float)))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class BasisMoments:
    g_vec: np.ndarray
    g_mat: np.ndarray
    n_clamped: int = 0
    clamped_weight: float = 0.0
    spec: BasisSpec | None = None


def _chunk_sums(spec, samples, weights):
    phi, outside = design_matrix_clamped(spec, samples)
    wphi = phi * weights[:, None]
    return wphi.sum(axis=0), wphi.T @ phi, int(outside.sum()), float(weights[outside].sum())


def _tree_reduce(parts):
    # pairwise combination in a fixed order, independent of thread count
    while len(parts) > 1:
        nxt = []
        for i in range(0, len(parts) - 1, 2):
            a, b = parts[i], parts[i + 1]
            nxt.append((a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]))
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def basis_moments(spec: BasisSpec, input_posterior: InputPosterior, n_threads: int | None = None) -> BasisMoments:
    """Weighted first and second basis moments under the input posterior.

    Samples outside the basis domain are clamped onto it and counted.  The
    sum runs over fixed-size chunks combined pairwise, so results do not
    depend on ``n_threads``.

    Raises
    ------
    DomainCoverageError
        If more than 1% of the posterior weight lies outside the domain.
    """
    samples = input_posterior.samples
    if samples.shape[1] != spec.n_params:
        raise ContractError(
            f"input posterior has {samples.shape[1]} parameters, basis expects "
            f"{spec.n_params}"
        )
    weights = input_posterior.weights
    bounds = range(0, samples.shape[0], CHUNK_ROWS)
    jobs = [(spec, samples[i : i + CHUNK_ROWS], weights[i : i + CHUNK_ROWS]) for i in bounds]
    n_threads = n_threads or default_threads()
    if n_threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            parts = list(pool.map(lambda job: _chunk_sums(*job), jobs))
    else:
        parts = [_chunk_sums(*job) for job in jobs]
    g_vec, g_mat, n_clamped, clamped_weight = _tree_reduce(parts)
    g_mat = 0.5 * (g_mat + g_mat.T)

    if clamped_weight > MAX_CLAMPED_WEIGHT:
        raise DomainCoverageError(
            f"{clamped_weight:.3%} of the input posterior weight ({n_clamped} "
            "samples) lies outside the basis domain; enlarge the domain and refit"
        )
    if n_clamped:
        logger.warning("clamped %d input samples onto the basis domain", n_clamped)
    for arr in (g_vec, g_mat):
        arr.setflags(write=False)
    return BasisMoments(g_vec, g_mat, n_clamped, clamped_weight, spec)


def _check_compatible(post: CoefficientPosterior, moments: BasisMoments) -> None:
    if post.spec is None and moments.spec is None:
        # raw designs: only the dimensions can be compared
        if np.shape(moments.g_vec) != (post.n_p,) or np.shape(moments.g_mat) != (post.n_p, post.n_p):
            raise ContractError(f"moments do not match {post.n_p} basis functions")
        return
    check_same_spec(post.spec, moments.spec)


def propagate_mean(post: CoefficientPosterior, moments: BasisMoments) -> np.ndarray:
    """Observable mean per site, ``g^T C_hat``."""
    _check_compatible(post, moments)
    return moments.g_vec @ post.c_hat


@dataclass(frozen=True)
class PropagationResult:
    """Propagated observable moments per site.

    ``cov_total = cov_naive + (surrogate_term + kernel_term) * I``; the
    kernel term is non-zero only for kernelised surrogates.
    ``trust_ratio`` uses the uncentred second moment as denominator,
    ``trust_ratio_centered`` the naive variance.
    """

    mean: np.ndarray
    cov_naive: np.ndarray
    cov_total: np.ndarray
    surrogate_term: float
    surrogate_share: np.ndarray
    trust_ratio: np.ndarray
    trust_ratio_centered: np.ndarray
    epsilon: float
    trustworthy: np.ndarray
    covariance_defined: bool = True
    kernel_term: float = 0.0
    site_labels: tuple[str, ...] = field(default=())

    @property
    def var_naive(self) -> np.ndarray:
        return np.diag(self.cov_naive).copy()

    @property
    def var_total(self) -> np.ndarray:
        return np.diag(self.cov_total).copy()


def check_epsilon(epsilon) -> float:
    try:
        eps = float(epsilon)
    except (TypeError, ValueError) as exc:
        raise ContractError(f"epsilon must be a number, got {epsilon!r}") from exc
    if not (np.isfinite(eps) and eps > 0):
        raise ContractError(f"epsilon must be finite and positive, got {epsilon!r}")
    return eps


def assemble_result(
    mean,
    second_moment,
    surrogate_term: float,
    epsilon: float,
    kernel_term: float = 0.0,
    covariance_defined: bool = True,
    site_labels=(),
) -> PropagationResult:
    """Build a :class:`PropagationResult` from the uncentred moments.

    ``second_moment[x, x']`` is the naive ``E[z_x z_x']``; the surrogate and
    kernel terms are added to its diagonal only.  When
    ``covariance_defined`` is false the share and trust ratios are NaN and
    no site is trustworthy.
    """
    mean = np.asarray(mean, dtype=float)
    second = np.asarray(second_moment, dtype=float)
    cov_naive = second - np.outer(mean, mean)
    cov_naive = 0.5 * (cov_naive + cov_naive.T)
    extra = float(surrogate_term) + float(kernel_term)
    cov_total = cov_naive + extra * np.eye(mean.shape[0])
    diag_total = np.diag(cov_total)
    with np.errstate(divide="ignore", invalid="ignore"):
        share = np.where(diag_total > 0, extra / np.where(diag_total > 0, diag_total, 1.0), 0.0)
    share = np.clip(share, 0.0, 1.0)
    ratio = _trust(extra, np.diag(second))
    ratio_c = _trust(extra, np.diag(cov_naive))
    if not covariance_defined:
        # no surrogate term exists to compare against
        share = np.full(mean.shape, np.nan)
        ratio = np.full(mean.shape, np.nan)
        ratio_c = np.full(mean.shape, np.nan)
    return PropagationResult(
        mean=mean,
        cov_naive=cov_naive,
        cov_total=cov_total,
        surrogate_term=float(surrogate_term),
        surrogate_share=share,
        trust_ratio=ratio,
        trust_ratio_centered=ratio_c,
        epsilon=epsilon,
        trustworthy=ratio < epsilon,
        covariance_defined=covariance_defined,
        kernel_term=float(kernel_term),
        site_labels=tuple(site_labels),
    )


def _trust(numerator: float, denominator) -> np.ndarray:
    den = np.asarray(denominator, dtype=float)
    out = np.full(den.shape, np.inf)
    pos = den > 0
    out[pos] = numerator / den[pos]
    if numerator == 0:
        out[:] = 0.0
    return out


def propagate_covariance(
    post: CoefficientPosterior,
    moments: BasisMoments,
    include_surrogate: bool = True,
    epsilon: float = DEFAULT_EPSILON,
) -> PropagationResult:
    """Observable mean and covariance with the surrogate-uncertainty term.

    The naive covariance is ``C_x^T G C_x' - (g^T C_x)(g^T C_x')``.  With
    ``include_surrogate`` the term ``sigma2_hat * tr(G H_s^-1)`` is added to
    every diagonal entry; cross-site entries are untouched because the
    coefficients of different sites are uncorrelated.

    Raises
    ------
    CovarianceUndefinedError
        If ``include_surrogate`` and ``(N_s - N_p) * N_x <= 2``.  The naive
        result is attached as ``exc.result``.
    """
    _check_compatible(post, moments)
    eps = check_epsilon(epsilon)
    c = post.c_hat
    mean = moments.g_vec @ c
    second = c.T @ moments.g_mat @ c
    if not include_surrogate:
        return assemble_result(mean, second, 0.0, eps, site_labels=post.site_labels)
    if not post.covariance_defined:
        naive = assemble_result(
            mean, second, 0.0, eps, covariance_defined=False, site_labels=post.site_labels
        )
        raise CovarianceUndefinedError(
            f"surrogate covariance undefined: (N_s - N_p) * N_x = {post.dof} <= 2",
            result=naive,
        )
    term = post.sigma2_hat * float(np.trace(post.h_solve(moments.g_mat)))
    return assemble_result(mean, second, max(term, 0.0), eps, site_labels=post.site_labels)


def trust_ratio(post: CoefficientPosterior, moments: BasisMoments, epsilon: float = DEFAULT_EPSILON):
    """Ratio of the surrogate term to the surrogate-explained second moment.

    Returns ``(ratio, trustworthy)`` per site, with
    ``ratio_x = sigma2_hat tr(G H_s^-1) / (C_x^T G C_x)`` and
    ``trustworthy_x = ratio_x < epsilon``.  A vanishing denominator yields
    ``inf`` (never trustworthy) unless the numerator is zero as well.
    """
    eps = check_epsilon(epsilon)
    _check_compatible(post, moments)
    sigma2 = post.require_covariance()
    term = sigma2 * float(np.trace(post.h_solve(moments.g_mat)))
    den = np.einsum("px,pq,qx->x", post.c_hat, moments.g_mat, post.c_hat)
    ratio = _trust(max(term, 0.0), den)
    return ratio, ratio < eps


def with_epsilon(result: PropagationResult, epsilon: float) -> PropagationResult:
    eps = check_epsilon(epsilon)
    return replace(result, epsilon=eps, trustworthy=result.trust_ratio < eps)


def flatten_spacetime(n_sites: int, n_times: int, site, time):
    """Compound column index ``site * n_times + time``."""
    site = np.asarray(site)
    time = np.asarray(time)
    if n_sites < 1 or n_times < 1:
        raise ContractError("n_sites and n_times must be positive")
    if np.any((site < 0) | (site >= n_sites)) or np.any((time < 0) | (time >= n_times)):
        raise ContractError(
            f"(site, time) = ({site}, {time}) out of range for {n_sites} x {n_times}"
        )
    out = site * n_times + time
    return int(out) if out.ndim == 0 else out


def unflatten_spacetime(n_sites: int, n_times: int, index):
    """Inverse of :func:`flatten_spacetime`; returns ``(site, time)``."""
    index = np.asarray(index)
    if np.any((index < 0) | (index >= n_sites * n_times)):
        raise ContractError(f"compound index {index} out of range")
    site, time = np.divmod(index, n_times)
    if site.ndim == 0:
        return int(site), int(time)
    return site, time
