"""Tensor-product Legendre bases on an affinely scaled box.

A basis is a list of multi-indices; multi-index ``(e_1, ..., e_d)`` stands for
the function ``prod_k P_{e_k}(xi_k)`` where ``xi`` is the parameter vector
mapped from its box ``[lo_k, hi_k]`` onto ``[-1, 1]``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import ContractError, DomainError

__all__ = [
    "BasisSpec",
    "total_degree_index_set",
    "legendre_table",
    "to_reference",
    "eval_basis",
    "build_design_matrix",
    "domain_from_samples",
]

# relative (to the interval width) overshoot that is silently clamped
DOMAIN_TOL = 1e-12


def total_degree_index_set(n_params: int, degree: int) -> list[tuple[int, ...]]:
    """All multi-indices with total degree <= ``degree`` in graded lex order.

    Within one total degree the exponent of the first parameter decreases,
    e.g. ``(2, 0), (1, 1), (0, 2)``.
    """
    if int(n_params) != n_params or n_params < 1:
        raise ContractError(f"n_params must be a positive integer, got {n_params!r}")
    if int(degree) != degree or degree < 0:
        raise ContractError(f"degree must be a non-negative integer, got {degree!r}")
    n_params, degree = int(n_params), int(degree)

    def compositions(total, parts):
        if parts == 1:
            yield (total,)
            return
        for first in range(total, -1, -1):
            for rest in compositions(total - first, parts - 1):
                yield (first,) + rest

    return list(
        itertools.chain.from_iterable(
            compositions(d, n_params) for d in range(degree + 1)
        )
    )


@dataclass(frozen=True)
class BasisSpec:
    """Legendre tensor basis: multi-indices plus the input box.

    Parameters
    ----------
    indices : sequence of sequences of int
        One multi-index per basis function.  The first must be the constant
        (all zeros).
    domain : sequence of (lo, hi)
        One interval per input parameter.
    family : str
        Only ``"legendre"`` is supported.
    """

    indices: tuple[tuple[int, ...], ...]
    domain: tuple[tuple[float, float], ...]
    family: str = "legendre"

    def __post_init__(self):
        indices = tuple(tuple(int(e) for e in idx) for idx in self.indices)
        domain = tuple((float(lo), float(hi)) for lo, hi in self.domain)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "domain", domain)

        if self.family != "legendre":
            raise ContractError(f"unsupported basis family {self.family!r}")
        if not indices:
            raise ContractError("a basis needs at least one multi-index")
        n_a = len(domain)
        if n_a < 1:
            raise ContractError("domain must have at least one interval")
        for idx in indices:
            if len(idx) != n_a:
                raise ContractError(
                    f"multi-index {idx} has length {len(idx)}, expected {n_a}"
                )
            if min(idx) < 0:
                raise ContractError(f"multi-index {idx} has a negative exponent")
        if len(set(indices)) != len(indices):
            raise ContractError("multi-indices must be unique")
        if any(indices[0]):
            raise ContractError("index 0 must be the constant multi-index")
        for k, (lo, hi) in enumerate(domain):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ContractError(f"domain interval {k} = [{lo}, {hi}] is invalid")

    @classmethod
    def total_degree(cls, domain, degree: int) -> "BasisSpec":
        """Total-degree truncated basis on ``domain``."""
        domain = tuple(domain)
        return cls(total_degree_index_set(len(domain), degree), domain)

    @property
    def n_params(self) -> int:
        return len(self.domain)

    @property
    def n_basis(self) -> int:
        return len(self.indices)

    @property
    def max_degree(self) -> int:
        return max(max(idx) for idx in self.indices)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "indices": [list(idx) for idx in self.indices],
            "domain": [[lo, hi] for lo, hi in self.domain],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BasisSpec":
        try:
            return cls(
                indices=data["indices"],
                domain=data["domain"],
                family=data.get("family", "legendre"),
            )
        except (KeyError, TypeError) as exc:
            raise ContractError(f"malformed basis spec: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def legendre_table(x, max_degree: int) -> np.ndarray:
    """Legendre values ``P_0 .. P_max_degree`` at ``x``.

    Uses the three-term recurrence
    ``(n + 1) P_{n+1} = (2n + 1) x P_n - n P_{n-1}``.  The result has shape
    ``x.shape + (max_degree + 1,)``.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (max_degree + 1,))
    out[..., 0] = 1.0
    if max_degree >= 1:
        out[..., 1] = x
    for n in range(1, max_degree):
        out[..., n + 1] = ((2 * n + 1) * x * out[..., n] - n * out[..., n - 1]) / (n + 1)
    return out


def domain_from_samples(samples, margin: float = 0.01) -> tuple[tuple[float, float], ...]:
    """Bounding box of ``samples`` widened by ``margin`` of its width per side.

    Degenerate (constant) columns get a unit-width box around the value.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    lo = samples.min(axis=0)
    hi = samples.max(axis=0)
    width = hi - lo
    pad = np.where(width > 0, margin * width, 0.5)
    return tuple((float(a), float(b)) for a, b in zip(lo - pad, hi + pad))


def _as_samples(spec: BasisSpec, samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, spec.n_params)
    if arr.ndim != 2 or arr.shape[1] != spec.n_params:
        raise ContractError(
            f"expected samples of shape (n, {spec.n_params}), got {arr.shape}"
        )
    return arr


def to_reference(spec: BasisSpec, samples, clamp: str = "strict"):
    """Map samples onto the reference cube ``[-1, 1]^d``.

    Parameters
    ----------
    clamp : {"strict", "all"}
        ``"strict"`` clamps only round-off overshoot (``DOMAIN_TOL`` of the
        interval width) and raises :class:`DomainError` beyond that.
        ``"all"`` clamps everything.

    Returns
    -------
    xi : ndarray, shape (n, d)
    outside : ndarray of bool, shape (n,)
        Rows that were beyond the tolerance (only non-trivial for ``"all"``).
    """
    arr = _as_samples(spec, samples)
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise DomainError(
            f"non-finite value in row {bad[0]}, coordinate {bad[1]}",
            coordinate=int(bad[1]),
            row=int(bad[0]),
        )
    lo = np.array([d[0] for d in spec.domain])
    hi = np.array([d[1] for d in spec.domain])
    width = hi - lo
    excess = np.maximum(lo - arr, arr - hi) / width
    beyond = excess > DOMAIN_TOL
    if clamp == "strict" and beyond.any():
        row, k = np.argwhere(beyond)[0]
        raise DomainError(
            f"row {row}: coordinate {k} = {arr[row, k]!r} lies outside "
            f"[{lo[k]!r}, {hi[k]!r}]",
            coordinate=int(k),
            row=int(row),
        )
    xi = 2.0 * (arr - lo) / width - 1.0
    np.clip(xi, -1.0, 1.0, out=xi)
    return xi, beyond.any(axis=1)


def _design_from_reference(spec: BasisSpec, xi: np.ndarray) -> np.ndarray:
    table = legendre_table(xi, spec.max_degree)  # (n, d, deg + 1)
    exps = np.array(spec.indices)  # (N_p, d)
    out = table[:, 0, exps[:, 0]]
    for k in range(1, spec.n_params):
        out = out * table[:, k, exps[:, k]]
    return np.ascontiguousarray(out)


def build_design_matrix(spec: BasisSpec, samples) -> np.ndarray:
    """Design matrix ``M[i, nu] = Phi_nu(samples[i])``, shape ``(N_s, N_p)``."""
    xi, _ = to_reference(spec, samples)
    return _design_from_reference(spec, xi)


def eval_basis(spec: BasisSpec, a) -> np.ndarray:
    """All basis functions at a single parameter vector ``a``."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 1:
        raise ContractError(f"expected a parameter vector, got shape {a.shape}")
    return build_design_matrix(spec, a[None, :])[0]


def design_matrix_clamped(spec: BasisSpec, samples):
    """Design matrix with every sample clamped into the domain.

    Returns the matrix and the boolean mask of rows that needed clamping.
    """
    xi, outside = to_reference(spec, samples, clamp="all")
    return _design_from_reference(spec, xi), outside


def check_same_spec(a: BasisSpec | None, b: BasisSpec | None) -> None:
    if a is None or b is None:
        raise ContractError("both operands need a basis spec to be compared")
    if a.to_json() != b.to_json():
        raise ContractError("basis specs differ")


def as_spec(spec: BasisSpec | dict | Sequence) -> BasisSpec:
    if isinstance(spec, BasisSpec):
        return spec
    if isinstance(spec, dict):
        return BasisSpec.from_dict(spec)
    raise ContractError(f"cannot interpret {type(spec).__name__} as a basis spec")
