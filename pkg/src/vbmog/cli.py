"""Command-line entry point.

Subcommands::

    vbmog run --config <path|bundled-name> [--seed N] [--out DIR]
    vbmog validate --artifacts DIR --samples M
    vbmog report --artifacts DIR
    vbmog check --artifacts DIR

Exit codes: 0 success, 2 configuration error, 3 forward-solver failure,
4 validation failure.  Errors are reported on stderr as one JSON object.
The environment variable ``VBMOG_WORKERS`` overrides the worker count.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, load_config
from .model import SolverError
from .runner import ArtifactError, check_artifacts, emit_report, run_pipeline, \
    validate_artifacts
from .validation import ValidationError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VALIDATION = 0, 2, 3, 4


def _error(kind, exc, code):
    doc = {"error": kind, "message": str(exc)}
    diag = getattr(exc, "diagnostics", None)
    if diag:
        doc["diagnostics"] = diag
    print(json.dumps(doc, default=str), file=sys.stderr)
    return code


def _cmd_run(args):
    cfg = load_config(args.config)
    res = run_pipeline(cfg, out_dir=args.out, seed=args.seed, validate=not args.no_validate)
    out = dict(res.summary, artifacts=str(res.path), run_seconds=round(res.runtime, 3))
    if res.validation is not None:
        out["ESS"] = res.validation["ESS"]
    print(json.dumps(out, indent=1))
    return EXIT_OK


def _cmd_validate(args):
    rep = validate_artifacts(args.artifacts, args.samples, seed=args.seed)
    print(json.dumps({k: rep[k] for k in ("M", "ESS", "forward_calls", "vb_forward_calls")}))
    return EXIT_OK


def _cmd_report(args):
    print(emit_report(args.artifacts))
    return EXIT_OK


def _cmd_check(args):
    results = check_artifacts(args.artifacts)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_VALIDATION


def build_parser():
    p = argparse.ArgumentParser(prog="vbmog", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="generate data, infer, validate")
    r.add_argument("--config", required=True, help="YAML file or bundled config name")
    r.add_argument("--seed", type=int, default=None, help="override the master seed")
    r.add_argument("--out", default=None, help="artifact directory")
    r.add_argument("--no-validate", action="store_true", help="skip importance sampling")
    r.set_defaults(func=_cmd_run)
    v = sub.add_parser("validate", help="importance-sampling check of stored artifacts")
    v.add_argument("--artifacts", required=True)
    v.add_argument("--samples", type=int, required=True)
    v.add_argument("--seed", type=int, default=None)
    v.set_defaults(func=_cmd_validate)
    rep = sub.add_parser("report", help="write plot-ready CSV tables")
    rep.add_argument("--artifacts", required=True)
    rep.set_defaults(func=_cmd_report)
    c = sub.add_parser("check", help="invariant suite on stored artifacts")
    c.add_argument("--artifacts", required=True)
    c.set_defaults(func=_cmd_check)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _error("config", exc, EXIT_CONFIG)
    except SolverError as exc:
        return _error("solver", exc, EXIT_SOLVER)
    except (ValidationError, ArtifactError) as exc:
        return _error("validation", exc, EXIT_VALIDATION)


if __name__ == "__main__":
    sys.exit(main())
