"""Command line: ``qsa run CONFIG``, ``qsa check``, ``qsa --version``.

Exit codes: 0 success, 2 invalid config, 3 divergence, 4 failed check.
Errors are reported on stderr as a single JSON object.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .config import ConfigError, load_config
from .core import DivergenceError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_CHECK_FAILED = 4


def _error(kind, message, code, **extra):
    print(json.dumps({"error": kind, "message": message, "exit_code": code, **extra}), file=sys.stderr)
    return code


def build_parser():
    ap = argparse.ArgumentParser(prog="qsa", description="Quasi-stochastic approximation experiments.")
    ap.add_argument("--version", action="version", version=f"qsa {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment config")
    run.add_argument("config", help="path to a JSON experiment config")
    run.add_argument("--out", default=None, help="output directory (default: config output_dir, then $QSA_OUT_DIR, then ./qsa-out)")
    run.add_argument("--jobs", type=int, default=1, help="worker processes for independent trials")

    chk = sub.add_parser("check", help="run an acceptance suite and report pass/fail per criterion")
    chk.add_argument("--suite", default="default", help="suite name: default or negative-control")
    chk.add_argument("--only", nargs="*", default=None, help="criterion keys to run, e.g. 1 3b 8")
    chk.add_argument("--jobs", type=int, default=1)
    return ap


def cmd_run(args):
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _error("invalid-config", str(exc), EXIT_CONFIG)
    if args.jobs < 1:
        return _error("invalid-config", "--jobs must be >= 1", EXIT_CONFIG)
    from .runner import run_experiment

    try:
        manifest = run_experiment(cfg, args.out, args.jobs)
    except DivergenceError as exc:
        return _error("divergence", str(exc), EXIT_DIVERGED, time=exc.time)
    except ValueError as exc:
        return _error("invalid-config", str(exc), EXIT_CONFIG)
    print(json.dumps({"kind": manifest["kind"], "files": manifest["files"], "config_hash": manifest["config_hash"]}))
    return EXIT_OK


def cmd_check(args):
    from .acceptance import SUITES, run_suite

    if args.suite not in SUITES:
        return _error("invalid-config", f"unknown suite {args.suite!r}; choose from {sorted(SUITES)}", EXIT_CONFIG)
    try:
        results = run_suite(args.suite, jobs=args.jobs, only=args.only, stream=sys.stdout)
    except DivergenceError as exc:
        return _error("divergence", str(exc), EXIT_DIVERGED, time=exc.time)
    failed = [r.key for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed" + (f"; failed: {' '.join(failed)}" if failed else ""))
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    return cmd_check(args)


if __name__ == "__main__":
    sys.exit(main())
