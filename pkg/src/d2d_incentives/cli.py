"""Command-line entry point: ``d2d-incentives <experiment> --scenario FILE``."""

from __future__ import annotations

import argparse
import logging
import sys

from .harness import run_scenario
from .model import ModelError
from .scenario import EXPERIMENTS


def _u64(text: str) -> int:
    val = int(text, 0)
    if not 0 <= val < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in an unsigned 64-bit integer, got {text}")
    return val


def _positive(text: str) -> float:
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return val


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="d2d-incentives",
        description="Best responses, equilibria, reward design and agent-based simulation "
        "for D2D offloading under infection risk.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="experiment")
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--scenario", required=True, help="scenario JSON file or a run manifest")
        p.add_argument("--seed", type=_u64, default=None, help="override the scenario seed")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--dt", type=_positive, default=None, help="Euler step for the dynamics")
        p.add_argument("--tol", type=_positive, default=None, help="root-finding tolerance")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        res = run_scenario(
            args.scenario, args.out, args.experiment, args.seed, args.dt, args.tol, max(1, args.jobs)
        )
    except (ModelError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"{res.experiment}: scenario {res.scenario_hash}")
    for name in res.outputs:
        print(f"  wrote {res.out_dir / name}")
    print(f"  manifest {res.manifest_path}")
    if res.experiment == "compare" and not res.summary.get("passed", True):
        print("  comparison outside tolerance", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
