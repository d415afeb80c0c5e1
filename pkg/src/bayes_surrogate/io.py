"""CSV and JSON formats.

All CSVs use '.' as decimal separator and write floats with 17 significant
digits, so values round-trip exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .basis import BasisSpec
from .exceptions import ContractError, ParseError
from .gpr import Kernel, ThetaGrid
from .propagate import InputPosterior, PropagationResult, flatten_spacetime
from .surrogate import CoefficientPosterior, TrainingSet

__all__ = [
    "FORMAT_VERSION",
    "WEIGHT_COLUMN",
    "LONG_COLUMNS",
    "format_float",
    "read_table",
    "write_csv",
    "read_training",
    "read_input_posterior",
    "posterior_to_dict",
    "posterior_from_dict",
    "save_posterior",
    "load_posterior",
    "load_spec",
    "load_kernel",
    "load_theta_grid",
    "propagation_rows",
    "write_propagation_csv",
    "PROPAGATION_COLUMNS",
]

FORMAT_VERSION = 1
WEIGHT_COLUMN = "__weight"
LONG_COLUMNS = ("sample", "site", "time", "value")
PROPAGATION_COLUMNS = (
    "site",
    "mean",
    "var_naive",
    "var_total",
    "surrogate_term",
    "surrogate_share",
    "trust_ratio",
    "trustworthy",
)


def format_float(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    v = float(value)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return "%.17g" % v


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Read a headed numeric CSV.

    Raises :class:`ParseError` naming the line and column of any bad or
    non-finite cell.
    """
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            vals = []
            for name, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}:{lineno}: column {name!r}: cannot parse {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise ParseError(
                        f"{path}:{lineno}: column {name!r}: non-finite value {cell!r}"
                    )
                vals.append(v)
            rows.append(vals)
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, data


def write_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) for v in row])


def _long_to_wide(header, data, n_samples, path):
    col = {name: header.index(name) for name in LONG_COLUMNS}
    idx = data[:, [col["sample"], col["site"], col["time"]]]
    if np.any(idx != np.round(idx)) or np.any(idx < 0):
        raise ParseError(f"{path}: sample/site/time must be non-negative integers")
    idx = idx.astype(int)
    n_sites = idx[:, 1].max() + 1
    n_times = idx[:, 2].max() + 1
    if idx[:, 0].max() + 1 != n_samples:
        raise ContractError(
            f"{path}: long-format outputs cover {idx[:, 0].max() + 1} samples, "
            f"inputs have {n_samples}"
        )
    wide = np.full((n_samples, n_sites * n_times), np.nan)
    cols = flatten_spacetime(n_sites, n_times, idx[:, 1], idx[:, 2])
    wide[idx[:, 0], cols] = data[:, col["value"]]
    if np.isnan(wide).any():
        i, j = np.argwhere(np.isnan(wide))[0]
        raise ParseError(f"{path}: missing value for sample {i}, compound column {j}")
    labels = [f"s{x}_t{t}" for x in range(n_sites) for t in range(n_times)]
    return wide, labels


def read_training(inputs_path, outputs_path) -> TrainingSet:
    """Training set from an inputs CSV and a wide or long outputs CSV.

    Wide outputs have one named column per site.  Long outputs have the
    columns ``sample, site, time, value`` and are flattened to the compound
    index ``site * n_times + time``.
    """
    in_header, inputs = read_table(inputs_path)
    out_header, outputs = read_table(outputs_path)
    if inputs.shape[0] == 0:
        raise ContractError(f"{inputs_path}: no training samples")
    if set(LONG_COLUMNS) <= set(out_header):
        outputs, labels = _long_to_wide(out_header, outputs, inputs.shape[0], outputs_path)
    else:
        labels = out_header
        if outputs.shape[0] != inputs.shape[0]:
            raise ContractError(
                f"{inputs_path} has {inputs.shape[0]} rows but {outputs_path} has "
                f"{outputs.shape[0]}"
            )
    return TrainingSet(inputs, outputs, site_labels=labels, param_names=in_header)


def read_input_posterior(path, param_names=()) -> InputPosterior:
    """Weighted sample CSV; an optional ``__weight`` column holds weights.

    When ``param_names`` is given, columns are selected and ordered by name.
    """
    header, data = read_table(path)
    weights = None
    if WEIGHT_COLUMN in header:
        w = header.index(WEIGHT_COLUMN)
        weights = data[:, w]
        keep = [i for i in range(len(header)) if i != w]
        header = [header[i] for i in keep]
        data = data[:, keep]
    if param_names and set(param_names) <= set(header):
        order = [header.index(n) for n in param_names]
        header = list(param_names)
        data = data[:, order]
    elif param_names and len(param_names) != len(header):
        raise ContractError(
            f"{path}: expected parameters {list(param_names)}, found {header}"
        )
    return InputPosterior(data, weights, param_names=tuple(header))


def _finite_or_none(v):
    v = float(v)
    return v if math.isfinite(v) else None


def posterior_to_dict(post: CoefficientPosterior) -> dict:
    if post.spec is None:
        raise ContractError("only posteriors with a basis spec can be serialised")
    return {
        "format_version": FORMAT_VERSION,
        "spec": post.spec.to_dict(),
        "c_hat": post.c_hat.tolist(),
        "h_matrix": post.h_matrix.tolist(),
        "chi2_min": post.chi2_min,
        "sigma2_hat": _finite_or_none(post.sigma2_hat),
        "dims": post.dims,
        "site_labels": list(post.site_labels),
        "param_names": list(post.param_names),
    }


def posterior_from_dict(data: dict) -> CoefficientPosterior:
    """Rebuild a posterior; ``h_matrix`` is re-factorised and checked PD."""
    try:
        version = data.get("format_version")
        if version != FORMAT_VERSION:
            raise ContractError(f"unsupported artifact format_version {version!r}")
        spec = BasisSpec.from_dict(data["spec"])
        dims = data["dims"]
        post = CoefficientPosterior.from_h_matrix(
            data["c_hat"],
            data["h_matrix"],
            data["chi2_min"],
            dims["n_s"],
            spec=spec,
            site_labels=data.get("site_labels", ()),
            param_names=data.get("param_names", ()),
        )
    except (KeyError, TypeError) as exc:
        raise ContractError(f"malformed posterior artifact: {exc}") from exc
    if (post.n_p, post.n_x) != (dims["n_p"], dims["n_x"]):
        raise ContractError("artifact dims do not match c_hat")
    return post


def save_posterior(post: CoefficientPosterior, path) -> None:
    Path(path).write_text(json.dumps(posterior_to_dict(post), indent=1) + "\n")


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from exc


def load_posterior(path) -> CoefficientPosterior:
    return posterior_from_dict(_load_json(path))


def load_spec(path) -> BasisSpec:
    return BasisSpec.from_dict(_load_json(path))


def load_kernel(path) -> Kernel:
    return Kernel.from_dict(_load_json(path))


def load_theta_grid(path) -> ThetaGrid:
    return ThetaGrid.from_dict(_load_json(path))


def propagation_rows(result: PropagationResult, site_labels=()):
    labels = list(site_labels or result.site_labels) or [
        str(x) for x in range(result.mean.shape[0])
    ]
    var_naive = result.var_naive
    var_total = result.var_total
    extra = result.surrogate_term + result.kernel_term
    for x, label in enumerate(labels):
        yield [
            label,
            result.mean[x],
            var_naive[x],
            var_total[x],
            extra,
            result.surrogate_share[x],
            result.trust_ratio[x],
            bool(result.trustworthy[x]),
        ]


def write_propagation_csv(result: PropagationResult, path, site_labels=(), flag: bool = False) -> None:
    """One row per site; ``flag`` appends a ``covariance_defined`` column."""
    header = list(PROPAGATION_COLUMNS)
    rows = list(propagation_rows(result, site_labels))
    if flag:
        header.append("covariance_defined")
        rows = [r + [bool(result.covariance_defined)] for r in rows]
    write_csv(path, header, rows)
