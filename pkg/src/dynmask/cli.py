"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .lti import invariant_zeros, tf_to_ss
from .scenario import SWEEPABLE, ConfigError, load_config, run_identification, run_scenario, sweep

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override scenario.seed")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="override scenario.out_dir")
    common.add_argument("--placement", choices=("d1", "d2"), default=argparse.SUPPRESS,
                        help="detector placement")

    parser = argparse.ArgumentParser(prog="dynmask", parents=[common],
                                     description="Dynamic masking experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", parents=[common], help="full learn-then-attack scenario")
    p.add_argument("config")
    p = sub.add_parser("sweep", parents=[common], help="repeat the scenario over parameter values")
    p.add_argument("config")
    p.add_argument("--param", required=True, choices=sorted(SWEEPABLE))
    p.add_argument("--values", required=True, help="comma-separated list")
    p.add_argument("--replicates", type=int, default=1)
    p = sub.add_parser("zeros", parents=[common], help="print invariant zeros of G and S")
    p.add_argument("config")
    p = sub.add_parser("identify", parents=[common], help="identification phase only")
    p.add_argument("config")
    return parser


def _fmt_zero(z):
    z = complex(z)
    return f"{z.real:.6g}" if z.imag == 0 else f"{z.real:.6g}{z.imag:+.6g}j"


def _load(args):
    cfg = load_config(args.config)
    overrides = {}
    if "seed" in args:
        overrides["seed"] = args.seed
    if "out_dir" in args:
        overrides["out_dir"] = args.out_dir
    if "placement" in args:
        overrides["placement"] = args.placement
    return cfg.replace(**overrides) if overrides else cfg


def _main(args) -> int:
    cfg = _load(args)
    if args.command == "zeros":
        for label, tf in (("G", cfg.plant), ("S", cfg.cipher)):
            zeros = invariant_zeros(tf_to_ss(tf))
            listed = ", ".join(f"{_fmt_zero(z.zero)} ({z.classification})" for z in zeros) or "none"
            print(f"{label}: {listed}")
        return 0
    if args.command == "identify":
        result, files = run_identification(cfg)
        print(result.to_text(), end="")
        for f in files:
            print(f"wrote {f}")
        return 0
    if args.command == "run":
        report = run_scenario(cfg)
        for k, v in report.summary().items():
            print(f"{k} = {v}")
        for f in report.files:
            print(f"wrote {f}")
        return 0
    values = [v for v in args.values.split(",") if v.strip()]
    try:
        values = [float(v) for v in values]
    except ValueError:
        raise ConfigError([f"--values: not a list of numbers: {args.values!r}"])
    reports = sweep(cfg, args.param, values, args.replicates)
    print(f"{len(reports)} run(s) completed; summary in {cfg.out_dir}/sweep_{args.param}.csv")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        return _main(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
