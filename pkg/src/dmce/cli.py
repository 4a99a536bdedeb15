"""``dmce`` command-line entry point.

Every subcommand accepts ``--config PATH --out DIR --seed U64 --profile {desk,paper}``.
Failures exit nonzero after printing one JSON line ``{"error": ..., "message": ...}``
to standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import bench
from .config import PROFILES, ExperimentConfig

COMMANDS = {
    "gen-data": bench.cmd_gen_data,
    "train": bench.cmd_train,
    "train-sure": bench.cmd_train_sure,
    "sweep": bench.cmd_sweep,
    "plot": bench.cmd_plot,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed out of u64 range: {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dmce", description="Diffusion-model MIMO channel estimation benchmarks")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key = value config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=_u64, default=0)
        p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": " ".join(str(message).split())}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config, args.out, seed=args.seed, profile=args.profile)
        result = COMMANDS[args.command](cfg)
    except KeyboardInterrupt:
        return _fail("interrupted", "interrupted", 130)
    except Exception as exc:  # surfaced as one machine-readable line
        return _fail(type(exc).__name__, str(exc), 1)
    outputs = result if isinstance(result, (list, tuple)) else [result]
    for path in outputs:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
