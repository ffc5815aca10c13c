"""``abdt`` command-line interface.

Exit codes: 0 success, 2 parse error, 3 domain error, 4 MCMC convergence
warning (the summary is still written). Errors are printed to stdout as
``{"error": {"code": ..., "message": ..., "row": ...}}``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
import warnings

import numpy as np

from . import __version__
from .core import DomainError, PriorSpec, ship
from .io import ParseError, fmt, group_histories, read_records, write_csv
from .policy_sim import parse_policies, simulate
from .prior_fit import (
    ConvergenceWarning,
    HyperPriors,
    McmcConfig,
    fit_prior,
    parse_sigma_model,
    qq_data,
)
from .quadrature import QuadratureError
from .risk import BetaGrid, beta_opt_curve, mu_sweep, optimal_threshold
from .sequential import FeatureHistory, posterior_optimal_threshold, posterior_summary

EXIT_OK, EXIT_PARSE, EXIT_DOMAIN, EXIT_CONVERGE = 0, 2, 3, 4
RANGE_FLAGS = ("--grid", "--sigma-range", "--mu-range")
_RANGE_VALUE = re.compile(r"^-[0-9.]")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ParseError(message)


def _emit(obj, raw, out=None):
    out = out or sys.stdout
    json.dump(fmt(obj, raw), out, indent=2, sort_keys=True)
    out.write("\n")


def _open_out(path):
    return sys.stdout if path in (None, "-") else open(path, "w", newline="", encoding="utf-8")


def _load_prior(args):
    if args.fit_output:
        try:
            with open(args.fit_output, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"cannot read fit output {args.fit_output}: {exc}") from None
        if "plug_in" not in doc:
            raise ParseError("fit output has no plug_in field")
        return PriorSpec.from_dict(doc["plug_in"])
    text = args.prior
    if os.path.exists(text):
        with open(text, encoding="utf-8") as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"--prior is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError("--prior must be a JSON object")
    return PriorSpec.from_dict(doc.get("plug_in", doc))


def _grid(text):
    return BetaGrid.parse(text)


def _positive(value, name):
    if not (math.isfinite(value) and value > 0):
        raise DomainError(f"{name} must be positive, got {value}")
    return value


def cmd_fit(args):
    records = read_records(args.data)
    cfg = McmcConfig(iterations=args.iters, burn_in=args.burn_in, seed=args.seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        summary = fit_prior(records, HyperPriors(), cfg)
    _emit(summary.to_dict(), args.raw)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return EXIT_OK if summary.converged else EXIT_CONVERGE


def cmd_threshold(args):
    prior = _load_prior(args)
    sigma = _positive(args.sigma, "sigma")
    rule, curve = optimal_threshold(prior, sigma, _grid(args.grid))
    out = rule.to_dict()
    out.update(
        risk=curve.argmin_risk,
        beta_refined=curve.beta_opt_refined,
        risk_refined=curve.risk_refined,
        prior=prior.to_dict(),
    )
    if args.curve_out:
        with _open_out(args.curve_out) as fh:
            write_csv(fh, ["beta", "risk"], curve.points, args.raw)
    _emit(out, args.raw)
    return EXIT_OK


def _sigma_values(text):
    try:
        lo, hi, step = (float(t) for t in text.split(":"))
    except ValueError:
        raise DomainError(f"--sigma-range must look like min:max:step, got {text!r}") from None
    if not (lo > 0 and step > 0 and lo <= hi):
        raise DomainError("--sigma-range needs 0 < min <= max and step > 0")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(n), 12)


def cmd_curve(args):
    prior = _load_prior(args)
    sigmas = _sigma_values(args.sigma_range)
    points = beta_opt_curve(prior, sigmas, _grid(args.grid))
    rows = [(p.sigma, p.beta_opt, p.risk_at_opt) for p in points]
    with _open_out(args.out) as fh:
        write_csv(fh, ["sigma", "beta_opt", "risk"], rows, args.raw)
    return EXIT_OK


def cmd_sweep(args):
    sigma = _positive(args.sigma, "sigma")
    tau = _positive(args.tau, "tau")
    if not args.nu > 1:
        raise DomainError("nu must exceed 1")
    mus = BetaGrid.parse(args.mu_range).points()
    rows = mu_sweep(args.nu, tau, sigma, mus, _grid(args.grid))
    with _open_out(args.out) as fh:
        write_csv(fh, ["mu", "beta_opt", "beta_opt_refined"], rows, args.raw)
    return EXIT_OK


def cmd_decide(args):
    prior = _load_prior(args)
    sigma_new = _positive(args.sigma_new, "sigma-new")
    if not math.isfinite(args.x_new):
        raise DomainError("x-new must be finite")
    if args.history:
        groups = group_histories(read_records(args.history))
        if len(groups) > 1:
            raise DomainError(f"history mixes feature ids: {sorted(groups)}")
        history = next(iter(groups.values())) if groups else FeatureHistory()
    else:
        history = FeatureHistory()
    threshold, _ = posterior_optimal_threshold(prior, history, sigma_new, _grid(args.grid))
    post = posterior_summary(prior, history)
    out = {
        "feature_id": history.feature_id,
        "n_previous": len(history),
        "threshold": float(threshold),
        "x_new": args.x_new,
        "sigma_new": sigma_new,
        "ship": bool(ship(args.x_new, threshold)),
        "posterior": None if post is None else post.to_dict(),
    }
    _emit(out, args.raw)
    return EXIT_OK


def cmd_simulate(args):
    prior = _load_prior(args)
    sigma_model = parse_sigma_model(args.sigma)
    try:
        policies = parse_policies(args.policies, prior)
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    if args.n < 1:
        raise DomainError("--n must be at least 1")
    trace = [] if args.trace_out else None
    report = simulate(prior, sigma_model, policies, args.n, args.seed, trace=trace)
    if trace is not None:
        with _open_out(args.trace_out) as fh:
            write_csv(fh, ["delta", "sigma", "x"] + [f"ship_{p.name}" for p in policies], trace, args.raw)
    out = report.to_dict()
    out["prior"] = prior.to_dict()
    out["sigma_model"] = sigma_model.to_dict()
    _emit(out, args.raw)
    return EXIT_OK


def cmd_qq(args):
    records = read_records(args.data)
    prior = _load_prior(args)
    pairs = qq_data(records, prior, args.n_ref, args.seed)
    with _open_out(args.out) as fh:
        write_csv(fh, ["empirical", "fitted"], pairs.tolist(), args.raw)
    return EXIT_OK


def _add_prior(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--prior", help='JSON prior, e.g. {"kind": "student_t", "nu": 2.31, "mu": -0.02, "tau": 0.18}')
    g.add_argument("--fit-output", help="JSON written by `abdt fit`; its plug_in prior is used")


def build_parser():
    parser = _Parser(prog="abdt", description="Bayes-optimal ship thresholds for A/B tests")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--raw", action="store_true", help="print full precision")

    p = sub.add_parser("fit", help="fit the Student-t lift prior by MCMC")
    p.add_argument("--data", required=True)
    p.add_argument("--iters", type=int, default=5000)
    p.add_argument("--burn-in", type=int, default=2500)
    p.add_argument("--seed", type=int, default=0)
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("threshold", help="optimal cutoff for one noise level")
    _add_prior(p)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--grid", default="-1:1:0.005")
    p.add_argument("--curve-out")
    common(p)
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("curve", help="optimal cutoff as a function of sigma (CSV)")
    _add_prior(p)
    p.add_argument("--sigma-range", required=True, help="min:max:step")
    p.add_argument("--grid", default="-1:1:0.005")
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("sweep", help="optimal cutoff as the t-prior location varies (CSV)")
    p.add_argument("--nu", type=float, default=2.31)
    p.add_argument("--tau", type=float, default=0.18)
    p.add_argument("--sigma", type=float, default=0.30)
    p.add_argument("--mu-range", default="-2:2:0.05")
    p.add_argument("--grid", default="-1:1:0.005")
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("decide", help="ship decision for the next test of a feature")
    _add_prior(p)
    p.add_argument("--history")
    p.add_argument("--x-new", type=float, required=True)
    p.add_argument("--sigma-new", type=float, required=True)
    p.add_argument("--grid", default="-5:5:0.005")
    common(p)
    p.set_defaults(func=cmd_decide)

    p = sub.add_parser("simulate", help="compare policies on simulated experiments")
    _add_prior(p)
    p.add_argument("--policies", default="never,oracle,p:0.05,bayes")
    p.add_argument("--sigma", default="0.3", help="0.3 | lognormal[:median:p99] | loguniform:lo:hi")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace-out")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("qq", help="Q-Q pairs of observed vs fitted lifts (CSV)")
    p.add_argument("--data", required=True)
    _add_prior(p)
    p.add_argument("--n-ref", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_qq)
    return parser


def _error(code, exc):
    err = {"code": code, "message": str(exc)}
    row = getattr(exc, "row", None)
    if row is not None:
        err["row"] = row
    json.dump({"error": err}, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")


def _bind_ranges(argv):
    """Join ``--grid -1:1:0.005`` into ``--grid=-1:1:0.005`` so argparse does
    not read the negative bound as an option."""
    out = []
    it = iter(argv)
    for tok in it:
        if tok in RANGE_FLAGS:
            nxt = next(it, None)
            if nxt is not None and _RANGE_VALUE.match(nxt):
                out.append(f"{tok}={nxt}")
                continue
            out.append(tok)
            if nxt is not None:
                out.append(nxt)
        else:
            out.append(tok)
    return out


def main(argv=None):
    argv = sys.argv[1:] if argv is None else [str(a) for a in argv]
    try:
        args = build_parser().parse_args(_bind_ranges(argv))
        return args.func(args)
    except ParseError as exc:
        _error("E_PARSE", exc)
        return EXIT_PARSE
    except (DomainError, QuadratureError) as exc:
        _error("E_DOMAIN", exc)
        return EXIT_DOMAIN


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
