"""``neatread`` command line.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from threadpoolctl import threadpool_limits

from . import __version__, config, pipeline
from .nn import ConfigError

COMMANDS = {
    "prepare": (pipeline.cmd_prepare, "build the vocabulary and the sequence cache"),
    "train-lm": (pipeline.cmd_train_lm, "phase 1: reader and decoder under random masks"),
    "train-attention": (pipeline.cmd_train_attention, "phase 2: attention policy by REINFORCE"),
    "simulate": (pipeline.cmd_simulate, "per-token fixation probabilities and sampled masks"),
    "evaluate": (pipeline.cmd_evaluate, "score the simulation against eye-tracking data"),
    "heatmap": (pipeline.cmd_heatmap, "HTML heatmap of fixation probabilities"),
}


def _common(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="FILE", default=default, help="JSON config file")
    parser.add_argument("--seed", type=int, metavar="U64", default=default, help="override the seed")
    parser.add_argument("--threads", type=int, metavar="N", default=default,
                        help="upper bound on BLAS threads")
    parser.add_argument("--paper-scale", action="store_true",
                        default=argparse.SUPPRESS if suppress else False,
                        help="use the full-size preset (vocabulary 10000, N=50, 1000 cells)")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", dest="overrides",
                        default=argparse.SUPPRESS if suppress else [],
                        help="override one config entry, e.g. --set train.alpha=2.5")
    parser.add_argument("--out", metavar="DIR", default=default, help="override paths.out_dir")
    parser.add_argument("-v", "--verbose", action="store_true",
                        default=argparse.SUPPRESS if suppress else False)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="neatread",
        description="Train and evaluate a reading model that learns which words to skip.",
    )
    parser.add_argument("--version", action="version", version=f"neatread {__version__}")
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        _common(p, suppress=True)
        if name == "heatmap":
            p.add_argument("--source", choices=("model", "human"), default="model")
    p = sub.add_parser("make-toy", help="write a toy corpus, eye-tracking file and config")
    p.add_argument("directory")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--train-tokens", type=int, default=40000)
    p.add_argument("--eval-tokens", type=int, default=4000)
    sub.add_parser("show-config", help="print the merged configuration as JSON")
    return parser


def run(argv=None, echo=print):
    """Parse ``argv`` and run one command; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "make-toy":
            pipeline.cmd_make_toy(args.directory, seed=args.seed or 0,
                                  train_tokens=args.train_tokens, eval_tokens=args.eval_tokens,
                                  echo=echo)
            return 0
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.threads is not None:
            overrides.append(f"threads={args.threads}")
        if args.out is not None:
            overrides.append(f'paths.out_dir="{args.out}"')
        cfg = config.load_config(args.config, paper_scale=args.paper_scale, overrides=overrides)
        if args.command == "show-config":
            import json

            echo(json.dumps(cfg, indent=2, sort_keys=True))
            return 0
        fn = COMMANDS[args.command][0]
        kwargs = {"source": args.source} if args.command == "heatmap" else {}
        with threadpool_limits(limits=cfg["threads"]):
            fn(cfg, echo=echo, **kwargs)
    except ConfigError as exc:
        print(f"neatread: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, ArithmeticError, RuntimeError) as exc:
        print(f"neatread: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
