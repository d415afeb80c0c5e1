"""Closed-form posterior of a generalized linear surrogate.

With a flat prior on the coefficient matrix ``C`` and a Jeffreys prior on the
unknown misfit scale, the coefficient posterior is a matrix Student-t
proportional to ``chi2(C) ** (-N_s * N_x / 2)``.  Its mean, covariance and
normalisation (the evidence) are available in closed form and are computed
here without ever forming an explicit inverse.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from .basis import BasisSpec, build_design_matrix
from .exceptions import (
    AggregateError,
    ContractError,
    CovarianceUndefinedError,
    EvidenceUndefinedError,
    InterpolationDegenerateError,
    SingularDesignError,
    SurrogateError,
    UnderdeterminedError,
)

__all__ = [
    "TrainingSet",
    "CoefficientPosterior",
    "EvidenceReport",
    "ModelScore",
    "chi2",
    "fit",
    "fit_design",
    "coefficient_covariance",
    "coefficient_covariance_matrix",
    "log_evidence",
    "log_evidence_design",
    "log_solid_angle",
    "predict_mean",
    "compare_models",
    "sample_coefficients",
    "covariance_defined",
    "evidence_defined",
]

MAX_CONDITION = 1e12
CHI2_FLOOR = 1e-300


def covariance_defined(n_s: int, n_p: int, n_x: int) -> bool:
    """Whether the Student-t coefficient covariance exists."""
    return (n_s - n_p) * n_x > 2


def evidence_defined(n_s: int, n_p: int, n_x: int) -> bool:
    """Whether the evidence integral converges (N_sx > N_bx)."""
    return n_s * n_x > n_p * n_x


@dataclass(frozen=True)
class TrainingSet:
    """Simulation design points and the observables computed there.

    Parameters
    ----------
    inputs : array_like, shape (N_s, N_a)
    outputs : array_like, shape (N_s, N_x)
        A 1-D array is taken as a single site.
    site_labels : sequence of str, optional
        Defaults to ``"0", "1", ...``.
    param_names : sequence of str, optional
    """

    inputs: np.ndarray
    outputs: np.ndarray
    site_labels: tuple[str, ...] = ()
    param_names: tuple[str, ...] = ()

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float)
        outputs = np.asarray(self.outputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs[:, None]
        if outputs.ndim == 1:
            outputs = outputs[:, None]
        if inputs.ndim != 2 or outputs.ndim != 2:
            raise ContractError("inputs and outputs must be 2-D")
        if inputs.shape[0] < 1:
            raise ContractError("a training set needs at least one sample")
        if inputs.shape[0] != outputs.shape[0]:
            raise ContractError(
                f"inputs have {inputs.shape[0]} rows but outputs have "
                f"{outputs.shape[0]}"
            )
        for name, arr in (("inputs", inputs), ("outputs", outputs)):
            if not np.all(np.isfinite(arr)):
                i, j = np.argwhere(~np.isfinite(arr))[0]
                raise ContractError(f"non-finite {name} entry at row {i}, column {j}")
        labels = tuple(str(s) for s in self.site_labels) or tuple(
            str(x) for x in range(outputs.shape[1])
        )
        if len(labels) != outputs.shape[1]:
            raise ContractError(
                f"{len(labels)} site labels for {outputs.shape[1]} output columns"
            )
        names = tuple(str(s) for s in self.param_names) or tuple(
            f"a{k}" for k in range(inputs.shape[1])
        )
        if len(names) != inputs.shape[1]:
            raise ContractError(
                f"{len(names)} parameter names for {inputs.shape[1]} input columns"
            )
        inputs.setflags(write=False)
        outputs.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)
        object.__setattr__(self, "site_labels", labels)
        object.__setattr__(self, "param_names", names)

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_sites(self) -> int:
        return self.outputs.shape[1]


@dataclass(frozen=True)
class CoefficientPosterior:
    """Student-t posterior over the surrogate coefficients.

    Attributes
    ----------
    c_hat : ndarray, shape (N_p, N_x)
        Posterior mean.
    h_matrix : ndarray, shape (N_p, N_p)
        Gram matrix ``M^T M`` of the design.
    h_cholesky : ndarray, shape (N_p, N_p)
        Lower Cholesky factor of ``h_matrix``.
    chi2_min : float
        Residual sum of squares at ``c_hat``, summed over all sites.
    """

    c_hat: np.ndarray
    h_matrix: np.ndarray
    h_cholesky: np.ndarray
    chi2_min: float
    n_s: int
    spec: BasisSpec | None = None
    site_labels: tuple[str, ...] = ()
    param_names: tuple[str, ...] = ()
    condition_number: float = float("nan")

    @classmethod
    def from_h_matrix(
        cls,
        c_hat,
        h_matrix,
        chi2_min: float,
        n_s: int,
        spec: BasisSpec | None = None,
        site_labels: Sequence[str] = (),
        param_names: Sequence[str] = (),
        condition_number: float = float("nan"),
    ) -> "CoefficientPosterior":
        """Build a posterior, factorising ``h_matrix`` and checking it is PD."""
        c_hat = np.array(c_hat, dtype=float)
        if c_hat.ndim == 1:
            c_hat = c_hat[:, None]
        h = np.array(h_matrix, dtype=float)
        n_p = c_hat.shape[0]
        if h.shape != (n_p, n_p):
            raise ContractError(f"h_matrix has shape {h.shape}, expected {(n_p, n_p)}")
        if not np.allclose(h, h.T, rtol=1e-12, atol=0.0):
            raise ContractError("h_matrix is not symmetric")
        try:
            chol = linalg.cholesky(h, lower=True)
        except linalg.LinAlgError as exc:
            raise SingularDesignError("H_s = M^T M is not positive definite") from exc
        if chi2_min < 0 or not np.isfinite(chi2_min):
            raise ContractError(f"chi2_min must be finite and >= 0, got {chi2_min}")
        if spec is not None and spec.n_basis != n_p:
            raise ContractError("spec size does not match c_hat")
        labels = tuple(site_labels) or tuple(str(x) for x in range(c_hat.shape[1]))
        for arr in (c_hat, h, chol):
            arr.setflags(write=False)
        return cls(
            c_hat=c_hat,
            h_matrix=h,
            h_cholesky=chol,
            chi2_min=float(chi2_min),
            n_s=int(n_s),
            spec=spec,
            site_labels=labels,
            param_names=tuple(param_names),
            condition_number=float(condition_number),
        )

    @property
    def n_p(self) -> int:
        return self.c_hat.shape[0]

    @property
    def n_x(self) -> int:
        return self.c_hat.shape[1]

    @property
    def dims(self) -> dict:
        return {"n_s": self.n_s, "n_p": self.n_p, "n_x": self.n_x}

    @property
    def dof(self) -> int:
        """Student-t degrees of freedom ``N_sx - N_bx``."""
        return (self.n_s - self.n_p) * self.n_x

    @property
    def covariance_defined(self) -> bool:
        return covariance_defined(self.n_s, self.n_p, self.n_x)

    @property
    def sigma2_hat(self) -> float:
        """Bayesian estimate of the squared misfit scale; NaN when undefined."""
        if not self.covariance_defined:
            return float("nan")
        return self.chi2_min / (self.dof - 2)

    def require_covariance(self) -> float:
        if not self.covariance_defined:
            raise CovarianceUndefinedError(
                f"coefficient covariance needs (N_s - N_p) * N_x > 2, got "
                f"({self.n_s} - {self.n_p}) * {self.n_x} = {self.dof}"
            )
        return self.sigma2_hat

    def h_solve(self, rhs) -> np.ndarray:
        """``H_s^{-1} @ rhs`` via the Cholesky factor."""
        return linalg.cho_solve((self.h_cholesky, True), rhs)

    def h_inverse(self) -> np.ndarray:
        inv = self.h_solve(np.eye(self.n_p))
        return 0.5 * (inv + inv.T)

    @property
    def logdet_h(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.h_cholesky))))


@dataclass(frozen=True)
class EvidenceReport:
    """Log-evidence and its additive pieces.

    The coefficient prior is improper, so the absolute value carries an
    arbitrary constant; only differences between models fitted to the same
    data are meaningful.
    """

    log_evidence: float
    components: dict = field(default_factory=dict)
    n_sx: int = 0
    n_bx: int = 0


def _as_coeffs(coeffs, n_p: int) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    if c.ndim != 2 or c.shape[0] != n_p:
        raise ContractError(f"coefficients must have {n_p} rows, got shape {c.shape}")
    return c


def chi2(training: TrainingSet, design, coeffs) -> float:
    """Total misfit ``sum_{i,x} (Z - M C)_{ix}^2``."""
    m = np.asarray(design, dtype=float)
    z = training.outputs
    if m.ndim != 2 or m.shape[0] != z.shape[0]:
        raise ContractError(
            f"design has shape {m.shape}, training set has {z.shape[0]} samples"
        )
    c = _as_coeffs(coeffs, m.shape[1])
    if c.shape[1] != z.shape[1]:
        raise ContractError(
            f"coefficients cover {c.shape[1]} sites, outputs have {z.shape[1]}"
        )
    resid = z - m @ c
    return float(np.sum(resid * resid))


def _dependent_columns(vt: np.ndarray, s: np.ndarray) -> list[int]:
    small = s < s[0] / MAX_CONDITION if s[0] > 0 else np.ones_like(s, bool)
    cols: set[int] = set()
    for v in vt[small]:
        cols.update(int(j) for j in np.flatnonzero(np.abs(v) > 0.1 * np.abs(v).max()))
    return sorted(cols)


def fit_design(
    design,
    outputs,
    spec: BasisSpec | None = None,
    site_labels: Sequence[str] = (),
    param_names: Sequence[str] = (),
) -> CoefficientPosterior:
    """Posterior for an arbitrary design matrix.

    Solves the least-squares problem with a thin QR factorisation, so the
    normal equations are never formed.  ``H_s`` is assembled from the
    triangular factor.
    """
    m = np.asarray(design, dtype=float)
    z = np.asarray(outputs, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if m.ndim != 2 or z.ndim != 2 or m.shape[0] != z.shape[0]:
        raise ContractError(f"design {m.shape} and outputs {z.shape} do not conform")
    n_s, n_p = m.shape
    if n_s < n_p:
        raise UnderdeterminedError(
            f"{n_s} training samples cannot determine {n_p} basis coefficients",
            columns=range(n_p),
        )

    q, r = np.linalg.qr(m)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    r = signs[:, None] * r
    q = q * signs[None, :]

    s, vt = np.linalg.svd(r, compute_uv=True)[1:]
    cond = s[0] / s[-1] if s[-1] > 0 else math.inf
    if not cond <= MAX_CONDITION:
        cols = _dependent_columns(vt, s)
        raise SingularDesignError(
            f"design matrix condition number {cond:.3g} exceeds {MAX_CONDITION:g}; "
            f"near-dependent columns: {cols}",
            columns=cols,
        )

    c_hat = linalg.solve_triangular(r, q.T @ z, lower=False)
    resid = z - m @ c_hat
    chi2_min = max(float(np.sum(resid * resid)), 0.0)
    h = r.T @ r
    h = 0.5 * (h + h.T)
    return CoefficientPosterior.from_h_matrix(
        c_hat,
        h,
        chi2_min,
        n_s,
        spec=spec,
        site_labels=site_labels,
        param_names=param_names,
        condition_number=cond,
    )


def fit(training: TrainingSet, spec: BasisSpec) -> CoefficientPosterior:
    """Fit the surrogate ``z = sum_nu C_nu Phi_nu(a)`` to ``training``."""
    if training.inputs.shape[1] != spec.n_params:
        raise ContractError(
            f"training inputs have {training.inputs.shape[1]} parameters, basis "
            f"expects {spec.n_params}"
        )
    if training.n_samples < spec.n_basis:
        raise UnderdeterminedError(
            f"{training.n_samples} training samples cannot determine "
            f"{spec.n_basis} basis coefficients",
            columns=range(spec.n_basis),
        )
    design = build_design_matrix(spec, training.inputs)
    return fit_design(
        design,
        training.outputs,
        spec=spec,
        site_labels=training.site_labels,
        param_names=training.param_names,
    )


def coefficient_covariance(post: CoefficientPosterior, nu: int, x: int, nu_p: int, x_p: int) -> float:
    """``<dC_{nu x} dC_{nu' x'}> = sigma2_hat * (H_s^-1)_{nu nu'} * delta_{x x'}``."""
    sigma2 = post.require_covariance()
    for i, n in ((nu, post.n_p), (nu_p, post.n_p), (x, post.n_x), (x_p, post.n_x)):
        if not 0 <= i < n:
            raise ContractError(f"index {i} out of range [0, {n})")
    if x != x_p:
        return 0.0
    e = np.zeros(post.n_p)
    e[nu_p] = 1.0
    return float(sigma2 * post.h_solve(e)[nu])


def coefficient_covariance_matrix(post: CoefficientPosterior) -> np.ndarray:
    """Full ``N_bx x N_bx`` covariance with compound index ``l = x * N_p + nu``."""
    sigma2 = post.require_covariance()
    return np.kron(np.eye(post.n_x), sigma2 * post.h_inverse())


def log_solid_angle(n: int) -> float:
    """Log of the total solid angle ``2 pi^(n/2) / Gamma(n/2)`` in ``n`` dims."""
    return math.log(2.0) + 0.5 * n * math.log(math.pi) - float(gammaln(0.5 * n))


def _evidence_from_posterior(post: CoefficientPosterior) -> EvidenceReport:
    n_sx = post.n_s * post.n_x
    n_bx = post.n_p * post.n_x
    if post.chi2_min < CHI2_FLOOR:
        raise InterpolationDegenerateError(
            f"chi2_min = {post.chi2_min:g} is below {CHI2_FLOOR:g}: the surrogate "
            "interpolates the training data and the evidence is singular; drop "
            "basis functions or add training runs"
        )
    components = {
        "log_solid_angle": log_solid_angle(n_bx),
        # block-diagonal H over sites: |H| = |H_s|^N_x
        "neg_half_logdet_H": -0.5 * post.n_x * post.logdet_h,
        "chi2_exponent_term": -0.5 * (n_sx - n_bx) * math.log(post.chi2_min),
        "log_gamma_terms": float(
            gammaln(0.5 * n_bx) + gammaln(0.5 * (n_sx - n_bx)) - gammaln(0.5 * n_sx)
        ),
    }
    total = math.fsum(components.values())
    return EvidenceReport(total, components, n_sx=n_sx, n_bx=n_bx)


def _check_evidence_gate(n_s: int, n_p: int, n_x: int) -> None:
    if not evidence_defined(n_s, n_p, n_x):
        raise EvidenceUndefinedError(
            f"evidence needs N_sx > N_bx, got N_sx = {n_s * n_x}, "
            f"N_bx = {n_p * n_x}"
        )


def log_evidence_design(design, outputs) -> EvidenceReport:
    m = np.asarray(design, dtype=float)
    z = np.asarray(outputs, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    _check_evidence_gate(m.shape[0], m.shape[1], z.shape[1])
    return _evidence_from_posterior(fit_design(m, z))


def log_evidence(training: TrainingSet, spec: BasisSpec) -> EvidenceReport:
    """Log-evidence of the basis ``spec`` for ``training``.

    Raises
    ------
    EvidenceUndefinedError
        If ``N_s * N_x <= N_p * N_x``.
    InterpolationDegenerateError
        If ``chi2_min`` underflows (exact fit).
    """
    _check_evidence_gate(training.n_samples, spec.n_basis, training.n_sites)
    return _evidence_from_posterior(fit(training, spec))


def predict_mean(post: CoefficientPosterior, a) -> np.ndarray:
    """Posterior-mean prediction ``Phi(a)^T C_hat``.

    A single parameter vector gives shape ``(N_x,)``; a batch of shape
    ``(n, N_a)`` gives ``(n, N_x)``.
    """
    if post.spec is None:
        raise ContractError("posterior has no basis spec attached")
    a = np.asarray(a, dtype=float)
    single = a.ndim == 1
    phi = build_design_matrix(post.spec, a[None, :] if single else a)
    out = phi @ post.c_hat
    return out[0] if single else out


@dataclass(frozen=True)
class ModelScore:
    spec_id: int
    n_p: int
    log_evidence: float
    probability: float
    status: str
    report: EvidenceReport | None = None
    error: str = ""


_STATUS = (
    (EvidenceUndefinedError, "evidence-undefined"),
    (InterpolationDegenerateError, "interpolation-degenerate"),
    (UnderdeterminedError, "underdetermined"),
    (SingularDesignError, "singular-design"),
)


def _status_of(exc: Exception) -> str:
    for cls, name in _STATUS:
        if isinstance(exc, cls):
            return name
    return "error"


def compare_models(
    training: TrainingSet, specs: Sequence[BasisSpec], n_threads: int = 1
) -> list[ModelScore]:
    """Rank basis specs by evidence.

    Specs whose evidence cannot be computed are reported with a status and
    zero probability after the ranked ones.  Ties go to the smaller basis.
    """
    specs = list(specs)
    if not specs:
        raise ContractError("need at least one basis spec")

    def score(item):
        i, spec = item
        try:
            return i, log_evidence(training, spec), None
        except SurrogateError as exc:
            return i, None, exc

    items = list(enumerate(specs))
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(score, items))
    else:
        results = [score(it) for it in items]

    ok = [(i, rep) for i, rep, exc in results if rep is not None]
    if not ok:
        raise AggregateError(
            "no basis spec admits an evidence",
            errors=[exc for _, _, exc in results],
        )
    logz = np.array([rep.log_evidence for _, rep in ok])
    probs = np.exp(logz - np.logaddexp.reduce(logz))

    scores = [
        ModelScore(i, specs[i].n_basis, rep.log_evidence, float(p), "ok", rep)
        for (i, rep), p in zip(ok, probs)
    ]
    scores.sort(key=lambda s: (-s.log_evidence, s.n_p, s.spec_id))
    failed = [
        ModelScore(i, specs[i].n_basis, float("nan"), 0.0, _status_of(exc), None, str(exc))
        for i, rep, exc in results
        if rep is None
    ]
    return scores + failed


def sample_coefficients(post: CoefficientPosterior, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` coefficient matrices from the Student-t posterior.

    Each draw is ``C_hat + L U sqrt(chi2_min / g)`` with ``L L^T = H_s^-1``,
    ``U`` standard normal of shape ``(N_p, N_x)`` and ``g`` chi-square with
    ``N_sx - N_bx`` degrees of freedom.  Returns shape ``(n, N_p, N_x)``.
    """
    post.require_covariance()
    n = int(n)
    if n < 0:
        raise ContractError("n must be non-negative")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((n, post.n_p, post.n_x))
    g = rng.chisquare(post.dof, size=n)
    # H = L_H L_H^T  =>  (L_H^T)^{-1} (L_H^T)^{-T} = H^{-1}
    flat = np.moveaxis(u, 0, 1).reshape(post.n_p, -1)
    x = linalg.solve_triangular(post.h_cholesky.T, flat, lower=False)
    x = np.moveaxis(x.reshape(post.n_p, n, post.n_x), 1, 0)
    return post.c_hat[None] + x * np.sqrt(post.chi2_min / g)[:, None, None]
