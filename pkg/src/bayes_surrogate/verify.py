"""Oracle checks bundled into a single report.

Each check is a dict ``{"check", "tolerance", "observed", "pass"}``.  The
instances are small, seeded and generated here, or taken from user data when
its shape fits the brute-force integrator.
"""

from __future__ import annotations

import math
import zlib

import numpy as np

from .basis import BasisSpec, build_design_matrix
from .oracle import (
    MAX_QUADRATURE_DIM,
    monte_carlo_propagation,
    projector_chi2,
    quadrature_posterior_moments,
    riemann_prior_check,
)
from .propagate import InputPosterior, basis_moments, propagate_covariance
from .surrogate import (
    TrainingSet,
    coefficient_covariance_matrix,
    fit,
    log_evidence,
)

__all__ = [
    "QUADRATURE_SHAPES",
    "MONTE_CARLO_SHAPES",
    "random_instance",
    "quadrature_checks",
    "riemann_checks",
    "projector_checks",
    "monte_carlo_checks",
    "verification_report",
]

# (N_s, N_p, N_x) with N_p * N_x <= 3 and N_sx > N_bx + 2
QUADRATURE_SHAPES = ((5, 1, 1), (6, 2, 1), (8, 3, 1), (4, 1, 2), (3, 1, 3))
# nu = N_sx - N_bx well above 4 so the variance has a finite standard error
MONTE_CARLO_SHAPES = ((14, 3, 1), (12, 3, 2), (16, 6, 1))


def _spec_for(n_p: int) -> BasisSpec:
    """Smallest total-degree Legendre basis with exactly ``n_p`` functions."""
    for n_params in range(1, n_p + 1):
        for degree in range(n_p):
            spec = BasisSpec.total_degree([(-1.0, 1.0)] * n_params, degree)
            if spec.n_basis == n_p:
                return spec
            if spec.n_basis > n_p:
                break
    return BasisSpec.total_degree([(-1.0, 1.0)], n_p - 1)


def random_instance(seed: int, n_s: int, n_p: int, n_x: int, noise: float = 0.3):
    """Seeded synthetic training set and basis with the requested shape."""
    rng = np.random.default_rng(seed)
    spec = _spec_for(n_p)
    a = rng.uniform(-1.0, 1.0, size=(n_s, spec.n_params))
    m = build_design_matrix(spec, a)
    c_true = rng.uniform(0.5, 1.5, size=(n_p, n_x)) * rng.choice([-1.0, 1.0], size=(n_p, n_x))
    z = m @ c_true + noise * rng.standard_normal((n_s, n_x))
    return TrainingSet(a, z), spec


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = np.max(np.abs(b))
    return float(np.max(np.abs(a - b)) / scale) if scale > 0 else float(np.max(np.abs(a)))


def _entry(name, tol, observed):
    observed = float(observed)
    return {
        "check": name,
        "tolerance": tol,
        "observed": observed,
        "pass": bool(math.isfinite(observed) and observed <= tol),
    }


def quadrature_checks(instances) -> list[dict]:
    """Compare closed-form mean, covariance and evidence ratios to quadrature.

    ``instances`` is a sequence of ``(name, training, spec)``.  Evidence
    ratios are formed between each instance and a second data set on the
    same design, so the improper-prior constant cancels.
    """
    out = []
    for name, training, spec in instances:
        design = build_design_matrix(spec, training.inputs)
        post = fit(training, spec)
        quad = quadrature_posterior_moments(training, design)
        mean_cf = post.c_hat.T.ravel()
        cov_cf = coefficient_covariance_matrix(post)
        out.append(_entry(f"quadrature_mean[{name}]", 1e-6, _rel(quad.mean, mean_cf)))
        out.append(_entry(f"quadrature_covariance[{name}]", 1e-5, _rel(quad.cov, cov_cf)))

        rng = np.random.default_rng(zlib.crc32(name.encode()))
        other = TrainingSet(
            training.inputs,
            training.outputs + 0.5 * rng.standard_normal(training.outputs.shape),
        )
        quad2 = quadrature_posterior_moments(other, design)
        d_quad = quad.log_norm - quad2.log_norm
        d_ev = log_evidence(training, spec).log_evidence - log_evidence(other, spec).log_evidence
        out.append(
            _entry(f"quadrature_evidence_ratio[{name}]", 1e-5, abs(math.expm1(d_quad - d_ev)))
        )
    return out


def riemann_checks(seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    spec = BasisSpec.total_degree([(-1.0, 1.0)] * 2, 1)
    samples = rng.uniform(-1.0, 1.0, size=(7, 2))
    points = [rng.normal(size=(spec.n_basis, 2)) * s for s in (0.1, 1.0, 10.0)]
    res = riemann_prior_check(spec, samples, points, seed=seed)
    return [
        _entry("riemann_prior_constancy", 1e-8, res.spread),
        _entry("riemann_numeric_vs_closed", 1e-8, res.max_rel_diff),
    ]


def projector_checks(instances) -> list[dict]:
    out = []
    for name, training, spec in instances:
        design = build_design_matrix(spec, training.inputs)
        post = fit(training, spec)
        ref = projector_chi2(training, design)
        scale = max(abs(ref), np.sum(training.outputs**2) * 1e-16, 1e-300)
        out.append(_entry(f"projector_chi2[{name}]", 1e-12, abs(post.chi2_min - ref) / scale))
    return out


def monte_carlo_checks(seed: int = 0, n_draws: int = 1_000_000, shapes=MONTE_CARLO_SHAPES) -> list[dict]:
    """Joint input and coefficient sampling against the propagated moments.

    ``observed`` is the largest deviation in units of the Monte Carlo
    standard error; the tolerance is 3.
    """
    out = []
    for k, (n_s, n_p, n_x) in enumerate(shapes):
        training, spec = random_instance(seed + 100 + k, n_s, n_p, n_x)
        post = fit(training, spec)
        rng = np.random.default_rng(seed + 200 + k)
        w = rng.uniform(0.5, 1.5, 500)
        inputs = InputPosterior(rng.uniform(-0.9, 0.9, size=(500, spec.n_params)), w / w.sum())
        res = propagate_covariance(post, basis_moments(spec, inputs, n_threads=1))
        mc = monte_carlo_propagation(post, inputs, n_draws=n_draws, seed=seed + k)
        z_mean = np.max(np.abs(mc.mean - res.mean) / mc.mean_se)
        z_var = np.max(np.abs(mc.var - res.var_total) / mc.var_se)
        name = f"{n_s}x{n_p}x{n_x}"
        out.append(_entry(f"monte_carlo_mean[{name}]", 3.0, z_mean))
        out.append(_entry(f"monte_carlo_variance[{name}]", 3.0, z_var))
    return out


def verification_report(
    seed: int = 0,
    n_instances: int = 5,
    mc_draws: int = 1_000_000,
    training: TrainingSet | None = None,
    spec: BasisSpec | None = None,
) -> list[dict]:
    """Run every oracle check.

    When ``training`` and ``spec`` are given the fit checks run on that
    data as well; the quadrature checks use it only if ``N_p * N_x <= 3``.
    """
    instances = []
    for k in range(n_instances):
        shape = QUADRATURE_SHAPES[k % len(QUADRATURE_SHAPES)]
        ts, sp = random_instance(seed + k, *shape)
        instances.append((f"seed{seed + k}:{shape[0]}x{shape[1]}x{shape[2]}", ts, sp))
    fit_instances = list(instances)
    if training is not None and spec is not None:
        fit_instances.insert(0, ("user", training, spec))
        n_sx = training.n_samples * training.n_sites
        n_bx = spec.n_basis * training.n_sites
        if n_bx <= MAX_QUADRATURE_DIM and n_sx > n_bx + 2:
            instances = fit_instances
    report = quadrature_checks(instances)
    report += riemann_checks(seed)
    report += projector_checks(fit_instances)
    if mc_draws > 0:
        report += monte_carlo_checks(seed, mc_draws)
    return report
