"""Command-line entry point for the experiment harness.

Each subcommand runs one study and writes its CSV (and optionally a JSON
summary) to --out or stdout.  A flat key-value --config file overrides
the study defaults; see the harness module for the grammar.
"""

import argparse
import sys
from pathlib import Path

from .harness import config_from_mapping, default_config, parse_config, run_experiment

EXPERIMENTS = ("poisson", "poisson-mixed", "quadrature", "infsup",
               "condition", "ns-manufactured", "cavity", "dump-lambda")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fourierdd",
        description="Non-conforming domain-decomposition experiments with "
                    "Fourier interface multipliers.")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} study")
        p.add_argument("--config", type=Path, default=None,
                       help="flat key-value config file")
        p.add_argument("--out", type=Path, default=None,
                       help="CSV output path (default: stdout)")
        p.add_argument("--json", action="store_true",
                       help="also write a JSON summary next to the CSV")
        p.add_argument("--full-scale", action="store_true",
                       help="enable the h=1/64 and h=1/128 cavity rows")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.config is not None:
        overrides = parse_config(args.config.read_text())
        overrides.setdefault("experiment", args.experiment)
        if overrides["experiment"] != args.experiment:
            raise SystemExit(
                f"config is for {overrides['experiment']!r}, "
                f"subcommand is {args.experiment!r}")
    else:
        overrides["experiment"] = args.experiment
    if args.full_scale:
        overrides["full_scale"] = True
    config = config_from_mapping(overrides)

    report = run_experiment(config)
    if args.out is None:
        report.to_csv(sys.stdout)
        if args.json:
            report.to_json(sys.stdout)
    else:
        with open(args.out, "w") as fh:
            report.to_csv(fh)
        if args.json:
            with open(args.out.with_suffix(".json"), "w") as fh:
                report.to_json(fh)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
