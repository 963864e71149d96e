"""Command line entry points.

    pmlab run --config scenario.yaml [--out DIR] [--jobs N] [--seed-override S]
    pmlab random --count N --seed S [--out DIR]

``run`` executes a scenario file and writes report.json, CSV tables and PNG
figures; ``random`` drives the randomized ordering suite.  Exit status: 0 on
success, 1 on configuration/IO errors, 2 when an asserted inequality fails.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import load_scenario
from .errors import ConfigError, InequalityViolated
from .reporting import render_figure, write_report_json, timestamp
from .scenarios import randomized_suite, run_scenario
from . import __version__


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmlab",
        description="Exact verification experiments for noisy Metropolis-Hastings kernels")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a scenario configuration")
    run_p.add_argument("--config", required=True, help="scenario YAML file")
    run_p.add_argument("--out", default=None, help="output directory")
    run_p.add_argument("--jobs", type=int, default=None,
                       help="parallel experiments (default: config value)")
    run_p.add_argument("--seed-override", type=int, default=None,
                       help="replace the scenario seed")

    rand_p = sub.add_parser("random", help="randomized ordering suite")
    rand_p.add_argument("--count", type=int, required=True)
    rand_p.add_argument("--seed", type=int, required=True)
    rand_p.add_argument("--out", default=None, help="write aggregate report here")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        try:
            scenario = load_scenario(args.config, seed_override=args.seed_override)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 1
        return run_scenario(scenario, out_dir=args.out, jobs=args.jobs,
                            config_path=args.config)
    if args.command == "random":
        try:
            report = randomized_suite(args.count, args.seed)
        except InequalityViolated as exc:
            payload = {"message": str(exc), "instance": exc.instance}
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                with open(out / "violation.json", "w") as fh:
                    json.dump(payload, fh, indent=2, sort_keys=True)
            print(f"inequality violated: {exc}", file=sys.stderr)
            return 2
        slacks = report["min_slacks"]
        for name in sorted(slacks):
            if slacks[name] is not None:
                print(f"[pass] {name}: min slack {slacks[name]:.3e}")
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            report_doc = {"version": __version__, "generated_at": timestamp(),
                          "suite": report}
            write_report_json(out / "report.json", report_doc)
            render_figure("random_suite", "random_suite",
                          {"min_slacks": {k: v for k, v in slacks.items()
                                          if v is not None}},
                          out / "random_suite.png")
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
