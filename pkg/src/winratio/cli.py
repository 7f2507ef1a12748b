"""Command-line front end: ``winratio analyze | simulate | truth``.

Exit codes: 0 success, 2 invalid input or usage, 3 the estimator is
undefined on the data (for example no losses at all).
"""
from __future__ import annotations

import argparse
import json
import math
import secrets
import sys
import warnings
from pathlib import Path

from . import __version__
from .covadjust import adjusted_if_variance, wr_adjusted
from .data import (Sensitivity, StudyConfig, apply_sensitivity_transform, read_config,
                   read_csv)
from .errors import EstimationError, ParseError, TooManyDegenerateReplicates, ValidationError, WinRatioError
from .estimators import pocock_estimate, wr_sscore
from .inference import (CiKind, bootstrap, bt_qt_ci, bt_wald_ci, default_jobs, if_variance,
                        if_wald_ci, pocock_ustat_variance, wald_ci)
from .simulate import (DEFAULT_METHODS, METHODS, PRESETS, _apply, parse_grid, preset,
                       run_scenario, summaries_to_csv, summaries_to_json, true_wr_oracle)

EXIT_OK, EXIT_USAGE, EXIT_DEGENERATE = 0, 2, 3
ANALYZE_METHODS = ("sscore", "pocock", "adjusted")
CI_KINDS = ("if", "bt-wald", "bt-qt")


class UsageError(WinRatioError):
    pass


def _csv_list(text, allowed, what):
    items = [t.strip().lower() for t in text.split(",") if t.strip()]
    bad = [t for t in items if t not in allowed]
    if bad or not items:
        raise UsageError(f"{what}: unknown value(s) {bad or [text]}; choose from {', '.join(allowed)}")
    return list(dict.fromkeys(items))


def _count(text):
    """Integer argument that also accepts forms such as ``1e6``."""
    value = float(text)
    if not value.is_integer():
        raise argparse.ArgumentTypeError(f"expected a whole number, got {text!r}")
    return int(value)


def _resolve_seed(seed):
    if seed is None:
        seed = secrets.randbits(32)
        print(f"seed: {seed}", file=sys.stderr)
    return seed


def _jsonable(obj):
    """Replace non-finite floats by None so reports stay strict JSON."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


# --- analyze --------------------------------------------------------------

def _interval_block(ci):
    return {"kind": ci.kind.value, "level": ci.level, "lower": ci.lower, "upper": ci.upper}


def _run_sscore_like(ds, estimator, if_fn, cis, alpha, boot, seed, jobs):
    est = estimator(ds)
    block = {"theta": est.theta, "p_win": est.p_win, "p_loss": est.p_loss,
             "variance": None, "intervals": []}
    if "if" in cis:
        dec = if_fn(ds)
        block["variance"] = dec.variance
        block["intervals"].append(_interval_block(if_wald_ci(dec, alpha)))
    if "bt-wald" in cis or "bt-qt" in cis:
        res = bootstrap(ds, estimator, boot, seed, n_jobs=jobs)
        block["bootstrap"] = {"B": boot, "failed": res.n_failed, "se": res.se}
        if block["variance"] is None:
            block["variance"] = res.se ** 2
        if "bt-wald" in cis:
            block["intervals"].append(_interval_block(bt_wald_ci(res, est.theta, alpha)))
        if "bt-qt" in cis:
            block["intervals"].append(_interval_block(bt_qt_ci(res, alpha)))
    return block


def _run_method(ds, method, args):
    if method == "sscore":
        return _run_sscore_like(ds, wr_sscore, if_variance, args.ci, args.alpha,
                                args.boot, args.seed, args.jobs)
    if method == "adjusted":
        return _run_sscore_like(ds, wr_adjusted, adjusted_if_variance, args.ci, args.alpha,
                                args.boot, args.seed, args.jobs)
    est, tally = pocock_estimate(ds)
    var = pocock_ustat_variance(ds)
    ci = wald_ci(est.theta, math.sqrt(var), args.alpha, CiKind.U_WALD)
    return {"theta": est.theta, "p_win": est.p_win, "p_loss": est.p_loss, "variance": var,
            "intervals": [_interval_block(ci)],
            "tally": {"wins": tally.wins, "losses": tally.losses, "ties": tally.ties}}


def _load_config(args) -> StudyConfig:
    if args.config:
        cfg = read_config(args.config)
        h = cfg.h if args.h is None else args.h
        tau = cfg.tau if args.tau is None else args.tau
        alpha = cfg.alpha if args.alpha is None else args.alpha
        return StudyConfig(h, tau, alpha)
    if args.h is None or args.tau is None:
        raise UsageError("give --h and --tau, or a --config file with keys h and tau")
    return StudyConfig(args.h, args.tau, 0.05 if args.alpha is None else args.alpha)


def cmd_analyze(args) -> int:
    args.methods = _csv_list(args.methods, ANALYZE_METHODS, "--methods")
    args.ci = _csv_list(args.ci, CI_KINDS, "--ci")
    modes = _csv_list(args.sensitivity, [m.value for m in Sensitivity], "--sensitivity") \
        if args.sensitivity else []
    if args.boot < 2:
        raise UsageError("--boot must be at least 2")
    config = _load_config(args)
    args.alpha = config.alpha
    covs = [c.strip() for c in args.covariates.split(",")] if args.covariates else None
    ds = read_csv(args.data, config, covariates=covs)
    if "adjusted" in args.methods and ds.covariates is None:
        raise UsageError("--methods adjusted needs covariate columns in the data "
                         "(add columns after y2 or name them with --covariates)")
    needs_seed = any(k.startswith("bt") for k in args.ci)
    args.seed = _resolve_seed(args.seed) if needs_seed or args.seed is not None else None
    args.jobs = default_jobs() if args.jobs is None else args.jobs

    report = {
        "tool": {"name": "winratio", "version": __version__},
        "config": {"data": str(args.data), "h": config.h, "tau": config.tau,
                   "alpha": config.alpha, "methods": args.methods, "ci": args.ci,
                   "boot": args.boot, "seed": args.seed, "covariates": list(ds.covariate_names or []),
                   "sensitivity": modes, "eps": args.eps},
        "dataset": ds.summary(),
        "estimates": [],
        "errors": [],
    }
    # the S-score point estimate is always reported when it exists
    order = list(dict.fromkeys(["sscore"] + args.methods))
    for method in order:
        try:
            block = _run_method(ds, method, args if method in args.methods else _point_only(args))
        except (EstimationError, TooManyDegenerateReplicates) as exc:
            report["errors"].append({"method": method, "error": type(exc).__name__,
                                     "message": str(exc)})
            continue
        report["estimates"].append({"method": method, **block})
    if modes:
        report["sensitivity"] = []
        for mode in modes:
            tds = apply_sensitivity_transform(ds, mode, args.eps)
            try:
                block = _run_method(tds, "sscore", args)
            except (EstimationError, TooManyDegenerateReplicates) as exc:
                report["errors"].append({"method": f"sscore[{mode}]", "error": type(exc).__name__,
                                         "message": str(exc)})
                continue
            report["sensitivity"].append({"mode": mode, **block})
    _emit(json.dumps(_jsonable(report), indent=2, allow_nan=False), args.out)
    return EXIT_DEGENERATE if report["errors"] else EXIT_OK


def _point_only(args):
    ns = argparse.Namespace(**vars(args))
    ns.ci = []
    return ns


def _emit(text, path):
    if path in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        Path(path).write_text(text + "\n")


# --- simulate -------------------------------------------------------------

def _scenarios(args):
    if args.grid:
        with open(args.grid) as fh:
            scs = parse_grid(fh.read())
    elif args.preset:
        try:
            scs = [preset(p.strip()) for p in args.preset.split(",") if p.strip()]
        except KeyError as exc:
            raise UsageError(exc.args[0])
    else:
        raise UsageError("give --preset NAME[,NAME...] or --grid FILE")
    for i, kv in enumerate(args.set or []):
        key, sep, value = kv.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {kv!r}")
        try:
            scs = [_apply(sc, key.strip().lower(), value.strip(), i + 1) for sc in scs]
        except ParseError as exc:
            raise UsageError(f"--set {kv}: {exc}")
    return scs


def cmd_simulate(args) -> int:
    if args.reps < 1:
        raise UsageError("--reps must be at least 1")
    methods = _csv_list(args.methods, METHODS, "--methods")
    scenarios = _scenarios(args)
    seed = _resolve_seed(args.seed)
    jobs = default_jobs() if args.jobs is None else args.jobs
    summaries = []
    for sc in scenarios:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            summaries.append(run_scenario(sc, methods, args.reps, seed, B=args.boot,
                                          alpha=args.alpha, n_jobs=jobs,
                                          oracle_pairs=args.oracle_pairs))
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    extra = {"tool": {"name": "winratio", "version": __version__},
             "config": {"reps": args.reps, "seed": seed, "boot": args.boot, "alpha": args.alpha,
                        "methods": methods, "oracle_pairs": args.oracle_pairs,
                        "scenarios": [sc.to_dict() for sc in scenarios]}}
    csv_text = summaries_to_csv(summaries)
    if args.out_csv:
        Path(args.out_csv).write_text(csv_text)
    if args.out_json:
        Path(args.out_json).write_text(summaries_to_json(summaries, extra) + "\n")
    if not args.out_csv:
        sys.stdout.write(csv_text)
    return EXIT_OK


# --- truth ----------------------------------------------------------------

def cmd_truth(args) -> int:
    args.grid = None
    sc = _scenarios(args)[0]
    seed = _resolve_seed(args.seed)
    if args.pairs < 1:
        raise UsageError("--pairs must be at least 1")
    res = true_wr_oracle(sc, n_super=args.super or max(args.pairs, 10**6),
                         n_pairs=args.pairs, seed=seed)
    print(f"{sc.name}: theta = {res.theta:.6f}  (MC SE {res.se:.6f}; "
          f"{res.wins} wins, {res.losses} losses in {res.n_pairs} pairs)")
    return EXIT_OK


# --- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="winratio", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="estimate the win ratio of one dataset")
    a.add_argument("--data", required=True, help="CSV with columns arm,time,event,y2[,x1..]")
    a.add_argument("--config", help="key=value file with h, tau and optionally alpha")
    a.add_argument("--h", type=float)
    a.add_argument("--tau", type=float)
    a.add_argument("--alpha", type=float)
    a.add_argument("--covariates", help="comma-separated covariate column names")
    a.add_argument("--methods", default="sscore,pocock", help="sscore,pocock,adjusted")
    a.add_argument("--ci", default="if", help="if,bt-wald,bt-qt")
    a.add_argument("--boot", type=_count, default=1000, help="bootstrap replicates")
    a.add_argument("--seed", type=int)
    a.add_argument("--jobs", type=int, help="worker processes (default $WINRATIO_JOBS or 1)")
    a.add_argument("--sensitivity", help="best,worst")
    a.add_argument("--eps", type=float, default=1.0,
                   help="time step after which censored control subjects die (sensitivity)")
    a.add_argument("--out", help="report path (default stdout)")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="replicate simulation scenarios")
    s.add_argument("--grid", help="scenario config file")
    s.add_argument("--preset", help="named scenario(s), comma-separated")
    s.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a scenario setting (repeatable)")
    s.add_argument("--reps", type=_count, default=500)
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int)
    s.add_argument("--boot", type=_count, default=500)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--methods", default=",".join(DEFAULT_METHODS),
                   help=f"subset of {','.join(METHODS)}")
    s.add_argument("--oracle-pairs", type=_count, default=10**6)
    s.add_argument("--out-csv")
    s.add_argument("--out-json")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("truth", help="Monte Carlo win ratio of a scenario's full data")
    t.add_argument("--preset", default="base-theta1", help=f"e.g. {', '.join(list(PRESETS)[:4])}")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("--pairs", type=_count, default=10**6)
    t.add_argument("--super", type=_count, help="super-population size per arm")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_truth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValidationError, ParseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WinRatioError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
