"""Command-line entry point: ``prosumbench generate|run|score|report``."""

from __future__ import annotations

import argparse
import logging
import sys

from .cohort import ConfigError
from .question_bank import BankError
from .runner import RunError, cmd_generate, cmd_report, cmd_run, cmd_score

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prosumbench",
        description="Benchmark language models on patient-reported outcome summarization.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="create a run directory with a synthetic cohort")
    gen.add_argument("--config", required=True, help="run config (YAML)")
    gen.add_argument("--out", default="runs", help="parent directory for runs (default: runs/)")
    gen.add_argument("--run-id", help="run directory name (default: timestamp + seed)")

    run = sub.add_parser("run", help="summarize, score and judge pending forms")
    run.add_argument("run_dir")
    run.add_argument("--models", help="comma-separated model_ids (default: all)")

    score = sub.add_parser("score", help="score externally produced summaries")
    score.add_argument("run_dir")
    score.add_argument("--summaries", required=True, help="JSON file of summaries by form_id")
    score.add_argument("--model-id", default="external", help="model_id for unlabelled entries")

    report = sub.add_parser("report", help="write tables and score distributions")
    report.add_argument("run_dir")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "generate":
            path = cmd_generate(args.config, args.out, args.run_id)
            print(path)
            return EXIT_OK
        if args.command == "run":
            models = [m.strip() for m in args.models.split(",") if m.strip()] if args.models else None
            return cmd_run(args.run_dir, models)
        if args.command == "score":
            records = cmd_score(args.run_dir, args.summaries, args.model_id)
            print(f"scored {len(records)} summaries")
            return EXIT_OK
        if args.command == "report":
            for path in cmd_report(args.run_dir).values():
                print(path)
            return EXIT_OK
    except (ConfigError, BankError, RunError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
