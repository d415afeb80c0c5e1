"""Brute-force cross-checks of the closed-form results, and a toy simulator.

Nothing in here completes the square.  The quadrature oracle integrates
``chi2(C) ** (-N_sx / 2)`` directly on a tensor grid, the Riemann-prior
check differentiates the log-likelihood numerically, and the Monte Carlo
oracle samples inputs and coefficients jointly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import BasisSpec, build_design_matrix
from .exceptions import ContractError, RefinementError
from .propagate import InputPosterior
from .surrogate import (
    CoefficientPosterior,
    TrainingSet,
    coefficient_covariance_matrix,
    fit_design,
    sample_coefficients,
)

__all__ = [
    "QuadratureGrid",
    "QuadratureMoments",
    "make_quadrature_grid",
    "quadrature_posterior_moments",
    "projector_chi2",
    "RiemannCheck",
    "riemann_prior_check",
    "MonteCarloMoments",
    "monte_carlo_propagation",
    "dense_gpr_reference",
    "toy_simulator",
    "TOY_N_PARAMS",
]

MAX_QUADRATURE_DIM = 3
MAX_NODES = 10**7
MIN_HALF_WIDTH_STD = 8.0


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor trapezoid grid in sinh-stretched coordinates.

    Coefficient ``k`` is ``center[k] + scale[k] * sinh(u)`` with ``u`` on
    ``n_nodes`` equispaced points in ``[-u_max[k], u_max[k]]``.  The stretch
    turns the algebraic Student-t tails into exponentially decaying ones, so
    the trapezoid rule converges geometrically.
    """

    center: np.ndarray
    scale: np.ndarray
    u_max: np.ndarray
    n_nodes: int

    def __post_init__(self):
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        scale = np.atleast_1d(np.asarray(self.scale, dtype=float))
        u_max = np.broadcast_to(np.asarray(self.u_max, dtype=float), center.shape).copy()
        if scale.shape != center.shape:
            raise ContractError("center and scale must have the same length")
        if np.any(scale <= 0) or np.any(u_max <= 0):
            raise ContractError("scale and u_max must be positive")
        if self.n_nodes < 3 or self.n_nodes % 2 == 0:
            raise ContractError("n_nodes must be odd and >= 3")
        if np.any(np.sinh(u_max) < MIN_HALF_WIDTH_STD):
            raise ContractError("grid must reach at least 8 scale units per side")
        if self.n_nodes ** center.size > MAX_NODES:
            raise ContractError(
                f"{self.n_nodes}^{center.size} nodes exceed the {MAX_NODES:g} guard"
            )
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "u_max", u_max)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def half_width(self) -> np.ndarray:
        return self.scale * np.sinh(self.u_max)

    def refined(self) -> "QuadratureGrid":
        return QuadratureGrid(self.center, self.scale, self.u_max, 2 * self.n_nodes - 1)

    def axes(self):
        """Per-axis nodes and trapezoid weights (Jacobian included)."""
        out = []
        for c, s, um in zip(self.center, self.scale, self.u_max):
            u = np.linspace(-um, um, self.n_nodes)
            w = np.full(self.n_nodes, u[1] - u[0])
            w[[0, -1]] *= 0.5
            out.append((c + s * np.sinh(u), w * s * np.cosh(u)))
        return out


@dataclass(frozen=True)
class QuadratureMoments:
    """Zeroth, first and second moments of the unnormalised posterior.

    ``log_norm`` is the log of ``int chi2(C)^(-N_sx/2) dC``; ``mean`` and
    ``cov`` use the compound index ``l = x * N_p + nu``.
    """

    log_norm: float
    mean: np.ndarray
    cov: np.ndarray
    n_nodes: int
    refinement_change: float


def make_quadrature_grid(training: TrainingSet, design, n_nodes: int = 41) -> QuadratureGrid:
    """Grid centred on the least-squares solution with std-sized stretch.

    Grid placement only affects efficiency, not the value being checked.
    """
    design = np.asarray(design, dtype=float)
    post = fit_design(design, training.outputs)
    n_sx = post.n_s * post.n_x
    std = np.sqrt(np.diag(coefficient_covariance_matrix(post)))
    center = post.c_hat.T.ravel()
    # integrand ~ |x|^(3 - N_sx) in the stretched tails
    decay = max(n_sx - 3, 1)
    reach = math.sqrt(post.dof + 1.0) * 10.0 ** (15.0 / decay)
    u_max = max(math.asinh(reach), math.asinh(MIN_HALF_WIDTH_STD))
    return QuadratureGrid(center, std, np.full(center.size, u_max), n_nodes)


def _log_integrand(design, outputs, points, n_p, n_x, n_sx):
    c = points.reshape(points.shape[0], n_x, n_p).transpose(0, 2, 1)
    resid = outputs[None] - np.einsum("iv,gvx->gix", design, c)
    chi2 = np.einsum("gix,gix->g", resid, resid)
    return -0.5 * n_sx * np.log(chi2)


def _integrate(design, outputs, grid: QuadratureGrid, n_p, n_x, n_sx, chunk=200_000):
    axes = grid.axes()
    nodes = [a[0] for a in axes]
    weights = [a[1] for a in axes]
    d = grid.dim
    mesh = np.stack(np.meshgrid(*nodes, indexing="ij"), axis=-1).reshape(-1, d)
    wmesh = weights[0]
    for w in weights[1:]:
        wmesh = np.multiply.outer(wmesh, w)
    wmesh = wmesh.ravel()

    log_f = np.empty(mesh.shape[0])
    for start in range(0, mesh.shape[0], chunk):
        sl = slice(start, start + chunk)
        log_f[sl] = _log_integrand(design, outputs, mesh[sl], n_p, n_x, n_sx)
    shift = log_f.max()
    f = np.exp(log_f - shift) * wmesh
    z0 = f.sum()
    mean = f @ mesh / z0
    dev = mesh - mean
    cov = (dev * f[:, None]).T @ dev / z0
    return math.log(z0) + shift, mean, cov


def quadrature_posterior_moments(
    training: TrainingSet,
    design,
    grid: QuadratureGrid | None = None,
    rtol: float = 1e-10,
    max_refinements: int = 4,
) -> QuadratureMoments:
    """Moments of ``chi2(C)^(-N_sx/2)`` by direct tensor quadrature.

    The grid is refined by node doubling until successive estimates agree
    to ``rtol``.

    Raises
    ------
    ContractError
        If ``N_p * N_x > 3`` or ``N_sx <= N_bx + 2``.
    RefinementError
        If the last refinement still changes the result by more than 1e-4.
    """
    design = np.asarray(design, dtype=float)
    z = training.outputs
    n_s, n_p = design.shape
    n_x = z.shape[1]
    n_sx, n_bx = n_s * n_x, n_p * n_x
    if n_bx > MAX_QUADRATURE_DIM:
        raise ContractError(f"quadrature oracle is limited to N_p * N_x <= 3, got {n_bx}")
    if n_sx <= n_bx + 2:
        raise ContractError(f"need N_sx > N_bx + 2, got N_sx = {n_sx}, N_bx = {n_bx}")
    if grid is None:
        grid = make_quadrature_grid(training, design)

    prev = _integrate(design, z, grid, n_p, n_x, n_sx)
    change = math.inf
    for _ in range(max_refinements):
        finer = grid.refined()
        if finer.n_nodes ** finer.dim > MAX_NODES:
            break
        grid = finer
        cur = _integrate(design, z, grid, n_p, n_x, n_sx)
        change = _rel_change(prev, cur)
        prev = cur
        if change < rtol:
            break
    if change > 1e-4:
        raise RefinementError(
            f"quadrature did not converge: last refinement changed results by {change:.3g}"
        )
    log_norm, mean, cov = prev
    return QuadratureMoments(log_norm, mean, cov, grid.n_nodes, change)


def _rel_change(a, b) -> float:
    d_norm = abs(math.expm1(b[0] - a[0]))
    scale_m = max(np.max(np.abs(b[1])), np.sqrt(np.max(np.diag(b[2]))))
    d_mean = np.max(np.abs(b[1] - a[1])) / scale_m
    d_cov = np.max(np.abs(b[2] - a[2])) / np.max(np.abs(np.diag(b[2])))
    return float(max(d_norm, d_mean, d_cov))


def projector_chi2(training: TrainingSet, design) -> float:
    """``chi2_min`` as ``tr Z^T (1 - M H^-1 M^T) Z`` with explicit matrices."""
    m = np.asarray(design, dtype=float)
    z = training.outputs
    proj = np.eye(m.shape[0]) - m @ np.linalg.inv(m.T @ m) @ m.T
    return float(np.trace(z.T @ proj @ z))


@dataclass(frozen=True)
class RiemannCheck:
    spread: float
    determinants: np.ndarray
    r_closed: np.ndarray
    r_numeric: np.ndarray
    max_rel_diff: float
    singular: bool


def riemann_prior_check(
    spec: BasisSpec,
    samples,
    c_points,
    delta: float = 1.0,
    n_data: int = 8,
    step: float = 0.5,
    seed: int = 0,
) -> RiemannCheck:
    """Check that the Fisher metric of the Gaussian likelihood is constant in ``C``.

    ``R`` is computed twice: from the closed form ``sum_k Phi_i Phi_j`` and as
    minus the finite-difference Hessian of the log-likelihood, averaged over
    ``n_data`` data sets simulated at each coefficient point.  Returns the
    relative spread of ``det R`` across ``c_points``.
    """
    m = build_design_matrix(spec, samples)
    c_points = [np.atleast_2d(np.asarray(c, dtype=float)) for c in c_points]
    c_points = [c.T if c.shape[0] == 1 and spec.n_basis > 1 else c for c in c_points]
    if len(c_points) < 2:
        raise ContractError("need at least two coefficient points")
    n_p = spec.n_basis
    n_x = c_points[0].shape[1]
    if any(c.shape != (n_p, n_x) for c in c_points):
        raise ContractError("coefficient points must all have shape (N_p, N_x)")
    dim = n_p * n_x

    per_site = m.T @ m
    r_closed = np.kron(np.eye(n_x), per_site)
    singular = (
        m.shape[0] < n_p or np.linalg.matrix_rank(r_closed) < dim
        or np.linalg.cond(r_closed) > 1e12
    )

    rng = np.random.default_rng(seed)
    eye = np.eye(dim)
    dets, r_nums = [], []
    for c in c_points:
        vec0 = c.T.ravel()  # l = x * N_p + nu
        hess = np.zeros((dim, dim))
        for _ in range(n_data):
            z = m @ c + delta * rng.standard_normal((m.shape[0], n_x))

            def loglik(vec):
                cc = vec.reshape(n_x, n_p).T
                r = z - m @ cc
                return -0.5 * np.sum(r * r) / delta**2

            for i in range(dim):
                for j in range(i, dim):
                    ei, ej = step * eye[i], step * eye[j]
                    val = (
                        loglik(vec0 + ei + ej)
                        - loglik(vec0 + ei - ej)
                        - loglik(vec0 - ei + ej)
                        + loglik(vec0 - ei - ej)
                    ) / (4 * step * step)
                    hess[i, j] += val
                    if i != j:
                        hess[j, i] += val
        r_num = -hess / n_data * delta**2
        r_nums.append(r_num)
        dets.append(np.linalg.det(r_num))
    dets = np.array(dets)
    scale = np.max(np.abs(dets))
    spread = float((dets.max() - dets.min()) / scale) if scale > 0 else 0.0
    diff = max(
        float(np.max(np.abs(r - r_closed)) / max(np.max(np.abs(r_closed)), 1e-300))
        for r in r_nums
    )
    return RiemannCheck(spread, dets, r_closed, r_nums[0], diff, bool(singular))


@dataclass(frozen=True)
class MonteCarloMoments:
    mean: np.ndarray
    var: np.ndarray
    mean_se: np.ndarray
    var_se: np.ndarray
    n_draws: int


def monte_carlo_propagation(
    post: CoefficientPosterior,
    input_posterior: InputPosterior,
    n_draws: int = 1_000_000,
    seed: int = 0,
    batch: int = 200_000,
) -> MonteCarloMoments:
    """Joint sampling of inputs and Student-t coefficients.

    Each draw picks ``a`` from the weighted input sample and ``C`` from
    :func:`sample_coefficients`, then evaluates ``Phi(a)^T C``.  Returns
    per-site mean, variance and their standard errors.
    """
    if post.spec is None:
        raise ContractError("posterior has no basis spec attached")
    rng = np.random.default_rng(seed)
    s1 = np.zeros(post.n_x)
    s2 = np.zeros(post.n_x)
    s3 = np.zeros(post.n_x)
    s4 = np.zeros(post.n_x)
    shift = None
    done = 0
    while done < n_draws:
        n = min(batch, n_draws - done)
        idx = rng.choice(input_posterior.n_samples, size=n, p=input_posterior.weights)
        phi = build_design_matrix(post.spec, input_posterior.samples[idx])
        coeffs = sample_coefficients(post, n, seed=int(rng.integers(2**63)))
        z = np.einsum("nv,nvx->nx", phi, coeffs)
        if shift is None:
            shift = z.mean(axis=0)
        d = z - shift
        s1 += d.sum(axis=0)
        s2 += (d**2).sum(axis=0)
        s3 += (d**3).sum(axis=0)
        s4 += (d**4).sum(axis=0)
        done += n
    m1 = s1 / n_draws
    var = s2 / n_draws - m1**2
    # fourth central moment from raw moments about the shift
    mu4 = s4 / n_draws - 4 * m1 * s3 / n_draws + 6 * m1**2 * s2 / n_draws - 3 * m1**4
    var_se = np.sqrt(np.maximum(mu4 - var**2, 0.0) / n_draws)
    return MonteCarloMoments(shift + m1, var, np.sqrt(var / n_draws), var_se, n_draws)


def dense_gpr_reference(design, outputs, k_matrix):
    """Kernel-weighted fit with explicit inverses: ``(C~, H~, chi2~)``."""
    m = np.asarray(design, dtype=float)
    z = np.asarray(outputs, dtype=float).reshape(m.shape[0], -1)
    kinv = np.linalg.inv(k_matrix)
    h = m.T @ kinv @ m
    hinv = np.linalg.inv(h)
    c = hinv @ m.T @ kinv @ z
    chi2 = float(np.trace(z.T @ (kinv - kinv @ m @ hinv @ m.T @ kinv) @ z))
    return c, h, chi2


TOY_N_PARAMS = 4
TOY_CUBIC_WEIGHT = 24.0


def toy_simulator(a, t, n_times: int = 50, site: int = 0) -> np.ndarray:
    """Synthetic transient response on ``[-1, 1]^4``.

    The response is a site-dependent quadratic in ``a`` with a mildly
    oscillating linear part, plus a cubic term whose weight grows as
    ``(t / (n_times - 1))^2``::

        z = 2 + w (1 + 0.3 sin(2 pi tau)) (0.4 a1 - 0.25 a2 + 0.15 a3 + 0.1 a4)
              + 0.4 a1^2 - 0.3 a2 a3 + 0.2 a4^2 + 0.1 a1 a4
              + 24 tau^2 (a1 a2 a3 - 0.8 a2 a3 a4)

    with ``tau = t / (n_times - 1)`` and ``w = 1 + 0.5 * site``.  At ``t = 0``
    a degree-2 basis is exact; at ``a = 0`` the response is 2 for all ``t``.

    ``a`` may be a single vector or an ``(n, 4)`` batch.
    """
    a = np.asarray(a, dtype=float)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    if a.shape[1] != TOY_N_PARAMS:
        raise ContractError(f"toy simulator takes {TOY_N_PARAMS} parameters")
    if np.any(np.abs(a) > 1.0):
        raise ContractError("toy simulator parameters must lie in [-1, 1]")
    if int(n_times) != n_times or n_times < 2:
        raise ContractError("n_times must be an integer >= 2")
    if int(t) != t or not 0 <= t < n_times:
        raise ContractError(f"time index {t} outside [0, {n_times})")
    if int(site) != site or site < 0:
        raise ContractError("site must be a non-negative integer")
    tau = t / (n_times - 1)
    a1, a2, a3, a4 = a.T
    w = 1.0 + 0.5 * site
    linear = 0.4 * a1 - 0.25 * a2 + 0.15 * a3 + 0.1 * a4
    quad = 0.4 * a1**2 - 0.3 * a2 * a3 + 0.2 * a4**2 + 0.1 * a1 * a4
    cubic = a1 * a2 * a3 - 0.8 * a2 * a3 * a4
    z = 2.0 + w * (1.0 + 0.3 * math.sin(2 * math.pi * tau)) * linear + quad
    z = z + TOY_CUBIC_WEIGHT * tau**2 * cubic
    return z[0] if single else z
