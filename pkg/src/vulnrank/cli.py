"""Command-line entry point.

Usage::

    vulnrank <stage> --config <file> [--force] [--seed N]
    vulnrank all --config <file> [--force] [--seed N]
    vulnrank synth --config <file> [--seed N]

Stages: extract, bpe, encode, train-lm, embed, simrows, features,
sample, train, score, evaluate, report.  Exit codes: 0 success,
2 config error, 3 missing upstream artifact, 4 data contract
violation, 1 anything else.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import VulnrankError
from .pipeline import STAGES, PipelineConfig, run_all, run_stage, run_synth

logger = logging.getLogger("vulnrank")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vulnrank",
        description="Rate source-code functions for vulnerability risk.",
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug-level logging")
    commands = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", required=True, help="pipeline config file")
        sub.add_argument("--seed", type=int, default=None,
                         help="override the config's global seed")
        return sub

    for stage in STAGES:
        sub = add(stage.name, f"run the {stage.name} stage")
        sub.add_argument("--force", action="store_true",
                         help="rerun even if artifacts are up to date")
    sub = add("all", "run every stage in order")
    sub.add_argument("--force", action="store_true",
                     help="rerun even if artifacts are up to date")
    add("synth", "generate the synthetic corpus and CVE label csv")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = PipelineConfig.from_file(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.command == "synth":
            corpus = run_synth(cfg)
            print(
                f"generated {corpus.num_functions} functions "
                f"({len(corpus.vulnerable_names)} labeled) under {corpus.source_root}"
            )
        elif args.command == "all":
            statuses = run_all(cfg, force=args.force)
            for stage, status in statuses.items():
                print(f"{stage}: {status}")
        else:
            status = run_stage(args.command, cfg, force=args.force)
            print(f"{args.command}: {status}")
    except VulnrankError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except Exception as exc:  # pragma: no cover - unexpected failure path
        logger.exception("unexpected failure: %s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
