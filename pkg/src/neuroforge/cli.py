"""Command-line interface.

Commands: simulate | preprocess | align | train | generate | eval | fairness
| demo. Global flags: --config PATH, --seed N, --out DIR, --deterministic,
--quiet, and repeatable --set section.key=value overrides. Environment
variables prefixed NEUROFORGE_ (double underscore nests, e.g.
NEUROFORGE_SIM__N_SUBJECTS=4) override the config file and are themselves
overridden by --set.

Exit codes: 0 success, 2 config/argument validation, 3 data integrity,
4 numerical failure or divergence, 5 I/O.
"""

from __future__ import annotations

import argparse
import json
import sys

import torch

from . import __version__
from .config import load_config
from .errors import NeuroforgeError, exit_code_for
from . import pipeline


def _shared_flags(parser):
    parser.add_argument("--config", default=None, help="TOML config file")
    parser.add_argument("--seed", type=int, default=None, help="override the global seed")
    parser.add_argument("--out", required=True, help="output directory (all outputs land here)")
    parser.add_argument(
        "--deterministic", action="store_true",
        help="single-threaded, zeroed wall times; byte-identical reruns",
    )
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY.PATH=VALUE",
        help="override a config key by dotted path (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neuroforge",
        description="Simulate, align, train, generate, and evaluate cross-modal neural signals.",
    )
    parser.add_argument("--version", action="version", version=f"neuroforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a paired dataset container")
    _shared_flags(p)

    p = sub.add_parser("preprocess", help="filter and (optionally) re-epoch a container")
    p.add_argument("input", help="input dataset container directory")
    _shared_flags(p)

    p = sub.add_parser("align", help="map a container into the conjugate domain")
    p.add_argument("input", help="preprocessed dataset container directory")
    _shared_flags(p)

    p = sub.add_parser("train", help="train the generator on an aligned container")
    p.add_argument("input", help="aligned dataset container directory")
    _shared_flags(p)

    p = sub.add_parser("generate", help="generate target epochs from source epochs")
    p.add_argument("checkpoint", help="checkpoint directory")
    p.add_argument("input", help="container with source epochs")
    _shared_flags(p)

    p = sub.add_parser("eval", help="score a generated container against a reference")
    p.add_argument("generated", help="generated container directory")
    p.add_argument("reference", help="reference container directory")
    _shared_flags(p)

    p = sub.add_parser("fairness", help="run the imbalance/augmentation protocol")
    p.add_argument("checkpoint", help="checkpoint directory")
    p.add_argument("input", help="container with source and target epochs")
    _shared_flags(p)

    p = sub.add_parser("demo", help="chain all stages on one config")
    _shared_flags(p)
    return parser


def _dispatch(args) -> None:
    config = load_config(args.config, overrides=args.set)
    if args.seed is not None:
        config["seed"] = int(args.seed)
    if args.deterministic:
        torch.set_num_threads(1)
    kwargs = dict(deterministic=args.deterministic, quiet=args.quiet)
    if args.command == "simulate":
        pipeline.run_simulate(config, args.out, **kwargs)
    elif args.command == "preprocess":
        pipeline.run_preprocess(args.input, config, args.out, **kwargs)
    elif args.command == "align":
        pipeline.run_align(args.input, config, args.out, **kwargs)
    elif args.command == "train":
        pipeline.run_train(args.input, config, args.out, **kwargs)
    elif args.command == "generate":
        pipeline.run_generate(args.checkpoint, args.input, config, args.out, **kwargs)
    elif args.command == "eval":
        pipeline.run_eval(args.generated, args.reference, config, args.out, **kwargs)
    elif args.command == "fairness":
        pipeline.run_fairness(args.checkpoint, args.input, config, args.out, **kwargs)
    elif args.command == "demo":
        pipeline.run_demo(config, args.out, **kwargs)
    else:  # pragma: no cover - argparse enforces the choices
        raise NeuroforgeError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _dispatch(args)
        return 0
    except (NeuroforgeError, OSError) as e:
        code = exit_code_for(e)
        print(f"error: {e}", file=sys.stderr)
        record = {"error": type(e).__name__, "message": str(e), "exit_code": code}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
