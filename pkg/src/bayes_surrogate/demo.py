"""End-to-end demonstration on the toy transient simulator.

Training runs are spread uniformly over ``[-1, 1]^4``; the input posterior
is a correlated, bimodal sample inside the cube.  One surrogate is fitted per
time index (all sites jointly), and the posterior is propagated to per-time
uncertainty bands with and without the surrogate term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisSpec
from .exceptions import UnderdeterminedError
from .oracle import TOY_N_PARAMS, toy_simulator
from .propagate import (
    DEFAULT_EPSILON,
    InputPosterior,
    basis_moments,
    propagate_covariance,
)
from .surrogate import TrainingSet, fit

__all__ = ["DemoResult", "demo_input_samples", "run_demo", "quartile_share", "BAND_COLUMNS"]

BAND_COLUMNS = (
    "time",
    "site",
    "mean",
    "naive_lo",
    "naive_hi",
    "total_lo",
    "total_hi",
    "var_naive",
    "var_total",
    "surrogate_term",
    "surrogate_share",
    "trust_ratio",
)


def demo_input_samples(n: int, rng: np.random.Generator) -> np.ndarray:
    """Draws from a symmetric two-mode correlated Gaussian mixture in the cube."""
    mode = np.array([0.4, 0.0, 0.0, 0.3])
    corr = np.array(
        [
            [1.0, 0.0, 0.0, 0.5],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.5, 0.0, 0.0, 1.0],
        ]
    )
    chol = np.linalg.cholesky(0.2 * corr)
    parts, have = [], 0
    while have < n:
        m = 2 * (n - have) + 16
        sign = np.where(rng.random(m) < 0.5, 1.0, -1.0)
        draw = sign[:, None] * mode + rng.standard_normal((m, TOY_N_PARAMS)) @ chol.T
        draw = draw[np.all(np.abs(draw) <= 1.0, axis=1)]
        parts.append(draw)
        have += draw.shape[0]
    return np.vstack(parts)[:n]


@dataclass(frozen=True)
class DemoResult:
    bands: np.ndarray  # rows in BAND_COLUMNS order
    train_inputs: np.ndarray
    train_outputs: np.ndarray  # (n_samples, n_sites * n_times), compound index
    n_sites: int
    n_times: int

    def column(self, name: str) -> np.ndarray:
        return self.bands[:, BAND_COLUMNS.index(name)]


def run_demo(
    n_samples: int = 100,
    n_times: int = 50,
    n_sites: int = 2,
    degree: int = 2,
    seed: int = 0,
    n_posterior: int = 20_000,
    epsilon: float = DEFAULT_EPSILON,
    n_threads: int | None = None,
) -> DemoResult:
    """Fit, propagate and tabulate bands for every time index and site."""
    spec = BasisSpec.total_degree([(-1.0, 1.0)] * TOY_N_PARAMS, degree)
    if n_samples < spec.n_basis:
        raise UnderdeterminedError(
            f"{n_samples} training runs cannot determine {spec.n_basis} coefficients"
        )
    rng = np.random.default_rng(seed)
    # space-filling design over the whole cube
    train_a = rng.uniform(-1.0, 1.0, size=(n_samples, TOY_N_PARAMS))
    posterior = InputPosterior(demo_input_samples(n_posterior, rng))
    moments = basis_moments(spec, posterior, n_threads=n_threads)

    outputs = np.empty((n_samples, n_sites * n_times))
    rows = []
    for t in range(n_times):
        z_t = np.column_stack(
            [toy_simulator(train_a, t, n_times, site) for site in range(n_sites)]
        )
        # compound index site * n_times + t
        outputs[:, np.arange(n_sites) * n_times + t] = z_t
        post = fit(TrainingSet(train_a, z_t), spec)
        res = propagate_covariance(post, moments, include_surrogate=True, epsilon=epsilon)
        sd_naive = np.sqrt(np.maximum(res.var_naive, 0.0))
        sd_total = np.sqrt(np.maximum(res.var_total, 0.0))
        for x in range(n_sites):
            rows.append(
                (
                    t,
                    x,
                    res.mean[x],
                    res.mean[x] - sd_naive[x],
                    res.mean[x] + sd_naive[x],
                    res.mean[x] - sd_total[x],
                    res.mean[x] + sd_total[x],
                    res.var_naive[x],
                    res.var_total[x],
                    res.surrogate_term,
                    res.surrogate_share[x],
                    res.trust_ratio[x],
                )
            )
    return DemoResult(np.array(rows, dtype=float), train_a, outputs, n_sites, n_times)


def quartile_share(result: DemoResult, quartile: int) -> float:
    """Median surrogate share over all sites in time quartile 0..3."""
    t = result.column("time")
    edges = np.linspace(0, result.n_times, 5)
    sel = (t >= edges[quartile]) & (t < edges[quartile + 1])
    return float(np.median(result.column("surrogate_share")[sel]))
