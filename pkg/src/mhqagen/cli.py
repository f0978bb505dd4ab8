"""Command-line entry point: one subcommand per pipeline stage, plus report."""

from __future__ import annotations

import argparse
import logging
import sys

from .corpus import CorpusError
from .pipeline import STAGE_ORDER, PipelineConfig, StageError, report, run_stage
from .providers import ProviderError

_STAGE_HELP = {
    "ingest": "load the corpus and write the eligible document list",
    "shqa": "generate, validate, and filter single-hop QA triplets",
    "relate": "score inter-document relations and enforce diversity",
    "cluster": "build paper clusters and select retrieval QAs",
    "mhqa": "generate and validate multi-hop items",
    "split": "split items into dev and test",
    "eval-retrieval": "benchmark retrieval over the three environments",
    "eval-qa": "score answers under oracle and realistic settings",
    "stats": "write dataset statistics",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mhqagen",
        description="Inter-document multi-hop QA dataset generation and evaluation.")
    parser.add_argument("--config", required=True, help="path to the run config JSON")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--force", action="store_true",
                        help="recompute the stage even when digests match")
    parser.add_argument("--mock-providers", action="store_true",
                        help="replace configured backends with the offline mocks")
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGE_ORDER:
        sub.add_parser(stage, help=_STAGE_HELP[stage])
    sub.add_parser("report", help="print a human-readable run summary")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = PipelineConfig.from_file(args.config, seed=args.seed,
                                          mock_providers=args.mock_providers)
        if args.command == "report":
            sys.stdout.write(report(config))
            return 0
        manifest = run_stage(args.command, config, force=args.force)
        status = "skipped (digests unchanged)" if manifest.skipped else "done"
        counts = manifest.counts
        sys.stdout.write(
            f"[{args.command}] {status}: in={counts['in']} kept={counts['kept']} "
            f"dropped={counts['dropped']} failed={counts['failed']}\n")
        return 0
    except (StageError, CorpusError, ProviderError, OSError, ValueError) as exc:
        stage = getattr(args, "command", "config")
        sys.stderr.write(f"[{stage}] error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
