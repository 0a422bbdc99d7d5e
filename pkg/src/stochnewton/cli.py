"""``stochnewton <subcommand> --config PATH [--seed N] [--out DIR]``.

Exit codes: 0 success, 1 config or I/O error, 2 censored run (max_iter hit),
3 validation failure.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, StochNewtonError
from .experiments import (COMMANDS, EXIT_CONFIG, EXIT_VALIDATION, cmd_montecarlo, cmd_sketchbench,
                          load_config)


def _fractions(text: str):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad fraction list {text!r}") from exc
    if not vals or any(not 0 < v <= 1 for v in vals):
        raise argparse.ArgumentTypeError("fractions must lie in (0, 1]")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochnewton", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--out", default=".", help="output directory")
        if name == "sketchbench":
            p.add_argument("--dims", type=_fractions, default=None, help="comma-separated fractions of n")
            p.add_argument("--kind", choices=("gaussian", "projection"), default=None)
            p.add_argument("--trials", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.command, args.config)
        if args.command == "sketchbench":
            return cmd_sketchbench(cfg, args.seed, args.out, args.dims, args.kind, args.trials)
        if args.command == "montecarlo":
            return cmd_montecarlo(cfg, args.seed, args.out)
        return COMMANDS[args.command](cfg, args.seed, args.out)
    except ConfigError as exc:
        print(f"stochnewton: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"stochnewton: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StochNewtonError as exc:
        print(f"stochnewton: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
