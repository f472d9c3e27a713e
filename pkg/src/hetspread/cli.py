"""Command line entry point: ``hetspread run | check | version``.

Exit codes: 0 success with every diagnostic passing, 1 usage or config error,
2 runtime error, 3 the run finished but a diagnostic failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load, validate
from .diagnostics import REPORT_NAME, report_diagnostics, write_json
from .experiments import ExperimentError, run

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_DIAGNOSTIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hetspread", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p_run = sub.add_parser("run", help="run the experiment described by a config file")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--seed", type=int, help="override the config seed")
    p_run.add_argument("--threads", type=int, help="worker threads for sweeps and replicas")
    p_run.add_argument("--out-dir", type=str, help="directory for output files")
    p_run.add_argument("--decimate", type=int, help="keep one trajectory row per this many steps")

    p_check = sub.add_parser("check", help="re-check the artifacts in a run directory")
    p_check.add_argument("artifact_dir", type=Path)

    sub.add_parser("version", help="print the package version")
    return parser


def _summary(report: dict) -> str:
    lines = []
    for c in report["checks"]:
        flag = "PASS" if c["passed"] else "FAIL"
        where = "" if c.get("location") is None else f" at n={c['location']}"
        lines.append(f"{flag} {c.get('section', '')}:{c['name']} max_violation={c['max_violation']:.3g}{where}")
    return "\n".join(lines)


def _cmd_run(args) -> int:
    try:
        cfg = load(args.config)
        overrides = {
            "seed": args.seed,
            "threads": args.threads,
            "out_dir": args.out_dir,
            "decimate": args.decimate,
        }
        cfg = validate(dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None}))
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        report = run(cfg)
    except ExperimentError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(_summary(report))
    return EXIT_OK if report["passed"] else EXIT_DIAGNOSTIC


def _cmd_check(args) -> int:
    try:
        report = report_diagnostics(args.artifact_dir)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    write_json(args.artifact_dir / REPORT_NAME, report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK if report["passed"] else EXIT_DIAGNOSTIC


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "version":
        print(__version__)
        return EXIT_OK
    if args.verb == "run":
        return _cmd_run(args)
    return _cmd_check(args)


if __name__ == "__main__":
    sys.exit(main())
