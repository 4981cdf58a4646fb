"""``mortv`` command line entry point."""

from __future__ import annotations

import argparse
import logging
import sys

from mortv.checks import run_checks
from mortv.errors import ConfigError
from mortv.scenario import bundled_configs, load_config, run_scenario

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_METHOD_ERROR = 3


def build_parser():
    ap = argparse.ArgumentParser(prog="mortv", description="Reduction of systems with moving loads and sensors.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario config (JSON)")
    run.add_argument("config", help="path to a config file or the name of a bundled one")
    run.add_argument("--output-dir", help="overrides output_dir of the config")
    run.add_argument("--methods", help="comma separated method names or labels to keep")
    run.add_argument("--desk", action="store_true", help="coarsen the mesh 4x for quick runs")
    run.add_argument("--seed-check", action="store_true", help="run the invariant suite first")
    sub.add_parser("configs", help="list bundled configs")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "configs":
        print("\n".join(bundled_configs()))
        return EXIT_OK
    if args.seed_check:
        results = run_checks()
        for name, ok, detail in results:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
        if not all(ok for _, ok, _ in results):
            return EXIT_CHECK_FAILED
    try:
        cfg = load_config(args.config)
        if args.desk:
            cfg = cfg.desk()
        if args.methods:
            cfg = cfg.only([m.strip() for m in args.methods.split(",") if m.strip()])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run_scenario(cfg, args.output_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.output_dir or cfg.output_dir
    with open(f"{out}/report.txt") as fh:
        print(fh.read(), end="")
    return EXIT_METHOD_ERROR if report.any_error else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
