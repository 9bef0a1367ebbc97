"""Command line entry point.

    smsp run --config PATH [--out DIR] [--seed N]
    smsp analyze --config PATH [--criterion real_part|spectral_radius]
    smsp abstraction --function NAME --domain LO..HI [--points N]

Exit codes: 0 success, 2 invalid input, 3 every mode eliminated.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from .abstraction import grid_samples, solve_parallel_abstraction
from .config import ConfigError, load
from .interval import IntervalVector
from .modes import AllModesEliminated
from .scenario import analyze, run_and_trace

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_ALL_ELIMINATED = 3

FUNCTIONS = {
    "square": np.square,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
    "theta_sin_theta": lambda x: x * np.sin(x),
}


def _parse_domain(text: str) -> IntervalVector:
    """``LO..HI``, e.g. ``0..1`` or ``-1.5..3.2``."""
    try:
        lo_s, hi_s = text.split("..")
        lo, hi = float(lo_s), float(hi_s)
    except ValueError:
        raise ValueError(f"domain must look like LO..HI, got {text!r}") from None
    if not lo <= hi:
        raise ValueError(f"domain is empty: {lo} > {hi}")
    return IntervalVector(np.array([lo]), np.array([hi]))


def _cmd_run(args) -> int:
    cfg = load(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    out_dir = args.out or cfg.output
    try:
        trace, summary = run_and_trace(cfg, out_dir)
    except AllModesEliminated as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALL_ELIMINATED
    print(json.dumps(summary, indent=2))
    print(f"trace: {trace}")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    cfg = load(args.config)
    report = analyze(cfg, criterion=args.criterion)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def _cmd_abstraction(args) -> int:
    if args.function not in FUNCTIONS:
        raise ValueError(f"unknown function {args.function!r}; choose from {', '.join(sorted(FUNCTIONS))}")
    if args.points < 2:
        raise ValueError("points must be at least 2")
    domain = _parse_domain(args.domain)
    psi = FUNCTIONS[args.function]
    pts, _ = grid_samples(domain, args.points)
    abs_ = solve_parallel_abstraction(psi, psi, domain, pts, 0.0)
    print(f"function: {args.function}")
    print(f"domain: {args.domain}")
    print(f"samples: {pts.shape[0]}")
    # adding 0.0 prints negative zeros as 0.0
    print(f"slope: {float(abs_.A[0, 0]) + 0.0!r}")
    print(f"e_lo: {float(abs_.e_lo[0]) + 0.0!r}")
    print(f"e_hi: {float(abs_.e_hi[0]) + 0.0!r}")
    print(f"theta: {abs_.theta!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smsp", description="Mode, state and attack-policy estimation for a power network.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log mode eliminations")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="simulate and estimate, writing trace.csv and summary.json")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None, help="output directory (default: [output] dir)")
    run.add_argument("--seed", type=int, default=None)
    run.set_defaults(handler=_cmd_run)
    an = sub.add_parser("analyze", help="stability and detectability report")
    an.add_argument("--config", required=True)
    an.add_argument("--criterion", choices=("real_part", "spectral_radius"), default="real_part")
    an.set_defaults(handler=_cmd_analyze)
    ab = sub.add_parser("abstraction", help="parallel affine abstraction of a scalar function")
    ab.add_argument("--function", required=True, help=", ".join(sorted(FUNCTIONS)))
    ab.add_argument("--domain", required=True, help="LO..HI")
    ab.add_argument("--points", type=int, default=2001, help="grid points per axis")
    ab.set_defaults(handler=_cmd_abstraction)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.handler(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
