"""Command line entry point: ``rlcg gen|train|bench CONFIG``."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .errors import ConfigError, CorruptFile, FormatVersionMismatch
from .experiment import cmd_bench, cmd_gen, cmd_train, load_config

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rlcg", description="Mixed-precision CG with a learned precision policy.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("gen", "generate train/test systems"), ("train", "train a policy"),
                        ("bench", "benchmark a trained policy against fp64 CG")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", nargs="?", help="YAML experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--policy", help="policy file (default OUT/policy.json)")
        p.add_argument("--mode", choices=("strict", "fast"))
        p.add_argument("--scale", choices=("desk", "paper"))
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out, mode=args.mode, scale=args.scale)
        if args.command == "gen":
            print(cmd_gen(cfg))
        elif args.command == "train":
            print(cmd_train(cfg, args.policy))
        else:
            report = cmd_bench(cfg, args.policy)
            sys.stdout.write(report.format_tables())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CorruptFile, FormatVersionMismatch) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
