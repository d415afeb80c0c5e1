"""Command-line workflows: fit, evidence, propagate, trust, demo, verify.

Exit codes are 0 on success, 1 on usage errors and 2 on numerical or
contract errors.  Any flag can also be supplied through ``--config``, a JSON
object whose keys are the flag names with dashes replaced by underscores;
flags given on the command line win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .basis import BasisSpec, domain_from_samples
from .demo import BAND_COLUMNS, quartile_share, run_demo
from .exceptions import CovarianceUndefinedError, SurrogateError
from .gpr import fit_gpr, propagate_gpr, propagate_gpr_marginal
from .io import (
    load_kernel,
    load_posterior,
    load_spec,
    load_theta_grid,
    read_input_posterior,
    read_training,
    save_posterior,
    write_csv,
    write_propagation_csv,
)
from .propagate import (
    DEFAULT_EPSILON,
    basis_moments,
    check_epsilon,
    default_threads,
    propagate_covariance,
)
from .surrogate import compare_models, fit
from .verify import verification_report

__all__ = ["main", "build_parser", "UsageError"]


class UsageError(Exception):
    """Missing or inconsistent command-line options."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_training(p):
    p.add_argument("--inputs", help="training inputs CSV (one named column per parameter)")
    p.add_argument("--outputs", help="training outputs CSV (wide or long format)")
    p.add_argument("--degree", type=int, help="total degree of the Legendre basis")
    p.add_argument("--spec", help="basis spec JSON, instead of --degree")
    p.add_argument("--margin", type=float, default=0.01,
                   help="domain padding as a fraction of the sample range (default 0.01)")


def _add_epsilon(p):
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON,
                   help="trust threshold (default 1e-3)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bayes-surrogate", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default from BAYES_SURROGATE_THREADS, else 1)")
    parser.add_argument("--config", help="JSON file with default option values")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a surrogate and write the posterior artifact")
    _add_training(p)
    p.add_argument("--artifact", help="output posterior JSON")

    p = sub.add_parser("evidence", help="rank basis degrees by evidence")
    _add_training(p)
    p.add_argument("--degrees", default="0,1,2", help="comma-separated degrees")
    p.add_argument("--output", help="output CSV (table also goes to stdout)")

    p = sub.add_parser("propagate", help="propagate an input posterior through a surrogate")
    _add_training(p)
    p.add_argument("--artifact", help="posterior JSON written by 'fit'")
    p.add_argument("--input-posterior", help="weighted sample CSV (optional __weight column)")
    p.add_argument("--output", help="output CSV")
    _add_epsilon(p)
    p.add_argument("--no-surrogate", dest="include_surrogate", action="store_false",
                   help="omit the surrogate-uncertainty term")
    p.add_argument("--kernel", help="kernel JSON for the Gaussian-process surrogate")
    p.add_argument("--grid", help="hyperparameter grid JSON, marginalised over")
    p.add_argument("--no-kernel-residual", dest="include_kernel_residual",
                   action="store_false", help="omit the kernel residual variance")
    p.add_argument("--weighting", choices=("posterior", "prior"), default="posterior",
                   help="grid weighting (default posterior)")

    p = sub.add_parser("trust", help="report the trust ratio per site")
    p.add_argument("--artifact", help="posterior JSON written by 'fit'")
    p.add_argument("--input-posterior", help="weighted sample CSV")
    p.add_argument("--output", help="output CSV (table also goes to stdout)")
    _add_epsilon(p)

    p = sub.add_parser("demo", help="run the toy transient pipeline")
    p.add_argument("--n-samples", type=int, default=100, help="training runs (default 100)")
    p.add_argument("--n-times", type=int, default=50, help="time steps (default 50)")
    p.add_argument("--n-sites", type=int, default=2, help="spatial sites (default 2)")
    p.add_argument("--degree", type=int, default=2, help="total basis degree (default 2)")
    p.add_argument("--n-posterior", type=int, default=20_000,
                   help="input posterior samples (default 20000)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    _add_epsilon(p)
    p.add_argument("--output", help="band CSV")

    p = sub.add_parser("verify", help="run the brute-force oracle checks")
    _add_training(p)
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--instances", type=int, default=5, help="random quadrature instances")
    p.add_argument("--mc-draws", type=int, default=1_000_000,
                   help="Monte Carlo draws per instance (0 skips the check)")
    p.add_argument("--output", help="report JSON (default stdout)")

    parser._subparsers_by_name = sub.choices  # used for --config defaults
    return parser


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.error("a subcommand is required")
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        if not isinstance(cfg, dict):
            parser.error("config must be a JSON object")
        sub = parser._subparsers_by_name[args.command]
        known = {a.dest for a in sub._actions} | {"threads"}
        unknown = set(cfg) - known
        if unknown:
            parser.error(f"unknown config keys: {sorted(unknown)}")
        if "threads" in cfg:
            parser.set_defaults(threads=cfg.pop("threads"))
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    if args.threads is None:
        args.threads = default_threads()
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    return args


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"{args.command}: missing {flags}")


def _specs(args, training, degrees):
    if getattr(args, "spec", None):
        return [load_spec(args.spec)]
    domain = domain_from_samples(training.inputs, args.margin)
    return [BasisSpec.total_degree(domain, d) for d in degrees]


def _training_and_spec(args):
    _require(args, "inputs", "outputs")
    if args.degree is None and not args.spec:
        raise UsageError(f"{args.command}: give --degree or --spec")
    training = read_training(args.inputs, args.outputs)
    return training, _specs(args, training, [args.degree])[0]


def _fmt(v) -> str:
    return "%.17g" % v


def cmd_fit(args) -> int:
    _require(args, "artifact")
    training, spec = _training_and_spec(args)
    post = fit(training, spec)
    save_posterior(post, args.artifact)
    status = "ok" if post.covariance_defined else "covariance undefined (needs > 2)"
    print(f"N_s = {post.n_s}")
    print(f"N_p = {post.n_p}")
    print(f"N_x = {post.n_x}")
    print(f"chi2_min = {_fmt(post.chi2_min)}")
    print(f"sigma2_hat = {_fmt(post.sigma2_hat) if post.covariance_defined else 'undefined'}")
    print(f"condition_number = {_fmt(post.condition_number)}")
    print(f"dof = {post.dof} ({status})")
    return 0


def cmd_evidence(args) -> int:
    _require(args, "inputs", "outputs")
    try:
        degrees = [int(d) for d in str(args.degrees).split(",") if d.strip()]
    except ValueError:
        raise UsageError(f"evidence: bad --degrees {args.degrees!r}") from None
    if not degrees and not args.spec:
        raise UsageError("evidence: no degrees given")
    training = read_training(args.inputs, args.outputs)
    specs = _specs(args, training, degrees)
    labels = [s.max_degree for s in specs] if args.spec else degrees
    scores = compare_models(training, specs, n_threads=args.threads)
    header = ["degree", "N_p", "log_evidence", "posterior_prob", "status"]
    rows = [[labels[s.spec_id], s.n_p, s.log_evidence, s.probability, s.status] for s in scores]
    if args.output:
        write_csv(args.output, header, rows)
    print(",".join(header))
    for r in rows:
        print(f"{r[0]},{r[1]},{_fmt(r[2])},{_fmt(r[3])},{r[4]}")
    return 0


def _propagate_gpr(args):
    if args.artifact:
        raise UsageError("propagate: a kernel fit needs training files, not --artifact")
    training, spec = _training_and_spec(args)
    inputs_post = read_input_posterior(args.input_posterior, training.param_names)
    if args.grid:
        return propagate_gpr_marginal(
            training, spec, load_theta_grid(args.grid), inputs_post,
            args.include_surrogate, args.include_kernel_residual, args.epsilon, args.weighting,
        )
    post = fit_gpr(training, spec, load_kernel(args.kernel))
    return propagate_gpr(
        post, inputs_post, args.include_surrogate, args.include_kernel_residual, args.epsilon
    )


def cmd_propagate(args) -> int:
    _require(args, "input_posterior", "output")
    check_epsilon(args.epsilon)
    if args.kernel or args.grid:
        try:
            result = _propagate_gpr(args)
        except CovarianceUndefinedError as exc:
            write_propagation_csv(exc.result, args.output, flag=True)
            raise
        write_propagation_csv(result, args.output)
        return 0

    if args.artifact:
        post = load_posterior(args.artifact)
    else:
        training, spec = _training_and_spec(args)
        post = fit(training, spec)
    inputs_post = read_input_posterior(args.input_posterior, post.param_names)
    moments = basis_moments(post.spec, inputs_post, n_threads=args.threads)
    try:
        result = propagate_covariance(post, moments, args.include_surrogate, args.epsilon)
    except CovarianceUndefinedError as exc:
        write_propagation_csv(exc.result, args.output, post.site_labels, flag=True)
        raise
    write_propagation_csv(result, args.output, post.site_labels)
    return 0


def cmd_trust(args) -> int:
    _require(args, "artifact", "input_posterior")
    post = load_posterior(args.artifact)
    inputs_post = read_input_posterior(args.input_posterior, post.param_names)
    moments = basis_moments(post.spec, inputs_post, n_threads=args.threads)
    result = propagate_covariance(post, moments, True, args.epsilon)
    header = ["site", "trust_ratio", "trust_ratio_centered", "trustworthy"]
    labels = post.site_labels or [str(x) for x in range(post.n_x)]
    rows = [
        [labels[x], result.trust_ratio[x], result.trust_ratio_centered[x],
         bool(result.trustworthy[x])]
        for x in range(post.n_x)
    ]
    if args.output:
        write_csv(args.output, header, rows)
    print(",".join(header))
    for r in rows:
        print(f"{r[0]},{_fmt(r[1])},{_fmt(r[2])},{'true' if r[3] else 'false'}")
    return 0


def cmd_demo(args) -> int:
    _require(args, "output")
    result = run_demo(
        n_samples=args.n_samples,
        n_times=args.n_times,
        n_sites=args.n_sites,
        degree=args.degree,
        seed=args.seed,
        n_posterior=args.n_posterior,
        epsilon=args.epsilon,
        n_threads=args.threads,
    )
    write_csv(args.output, BAND_COLUMNS, (
        [int(r[0]), int(r[1]), *r[2:]] for r in result.bands
    ))
    shares = [quartile_share(result, q) for q in range(4)]
    print("median surrogate_share by time quartile: " + " ".join(_fmt(s) for s in shares))
    return 0


def cmd_verify(args) -> int:
    training = spec = None
    if args.inputs or args.outputs:
        training, spec = _training_and_spec(args)
    report = verification_report(
        seed=args.seed,
        n_instances=args.instances,
        mc_draws=args.mc_draws,
        training=training,
        spec=spec,
    )
    text = json.dumps(report, indent=1) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    failed = [e["check"] for e in report if not e["pass"]]
    if failed:
        print(f"failed checks: {', '.join(failed)}", file=sys.stderr)
        return 2
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "evidence": cmd_evidence,
    "propagate": cmd_propagate,
    "trust": cmd_trust,
    "demo": cmd_demo,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = _parse(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"bayes-surrogate: error: {exc}", file=sys.stderr)
        return 1
    except SurrogateError as exc:
        print(f"bayes-surrogate: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
