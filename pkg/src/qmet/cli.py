"""Command line entry point: ``qmet <subcommand> --config FILE --out DIR [--seed N]``."""

from __future__ import annotations

import argparse
import sys

from .config import default_config, load_config
from .experiments import COMMANDS

HELP = {
    "numerics_selftest": "compare the race probability and its gradients with reference values",
    "toy3": "fit the 3-element toy space and predict the held-out pair",
    "verify_failure": "train unconstrained MLPs on the two failure patterns",
    "graph_bench": "train distance heads on a random directed graph",
    "gridworld": "offline Q-learning and greedy planning in the one-way-door grid world",
    "decompose3": "decompose random 3-element quasimetrics into quasipartitions",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qmet", description="Quasimetric learning experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in COMMANDS:
        p = sub.add_parser(kind.replace("_", "-"), help=HELP[kind])
        p.add_argument("--config", help="INI config file; defaults are used for missing keys")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    kind = args.command.replace("-", "_")
    try:
        cfg = load_config(args.config, kind) if args.config else default_config(kind)
    except (OSError, ValueError) as e:
        print(f"qmet: bad config: {e}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.experiment.seeds = (args.seed,)
    status = COMMANDS[kind](cfg, args.out)
    print(f"qmet {args.command}: status {status}, outputs in {args.out}")
    return status


if __name__ == "__main__":
    sys.exit(main())
