"""Command line entry point.

Exit codes: 0 success, 2 invalid input, 3 infeasible OCP or transmission,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config
from .errors import RolloutETCError, ValidationError
from .experiments import VERBS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rollout-etc",
        description="Rollout event-triggered control under a token bucket traffic specification.",
    )
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")
    helps = {
        "run": "simulate one closed loop",
        "sweep-horizon": "closed-loop cost for a range of prediction horizons",
        "etc-search": "grid search of the classical ETC trigger parameter",
        "timing": "median OCP solve time for a range of prediction horizons",
        "verify-ingredients": "synthesize terminal ingredients and check cost decrease",
    }
    for verb in VERBS:
        p = sub.add_parser(verb, help=helps[verb])
        p.add_argument("config", help="JSON experiment configuration")
        p.add_argument("--out", default=None, help="artifact directory (default: config out_dir or ./out/<name>)")
        p.add_argument("--quiet", action="store_true", help="suppress progress messages")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = Path(args.out or cfg.out_dir or Path("out") / cfg.name)
        VERBS[args.verb](cfg, out, quiet=args.quiet)
    except ValidationError as exc:
        print("error: invalid input", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return exc.exit_code
    except RolloutETCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    if not args.quiet:
        print(f"artifacts written to {out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
