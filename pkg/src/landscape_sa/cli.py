"""
Command-line entry point.

Usage:
    python -m src.landscape_sa run --config experiment.json --jobs 4 --out out
    python -m src.landscape_sa design --config experiment.json --seed 7
    python -m src.landscape_sa analyze --config experiment.json --stage-from analyze

Each stage subcommand runs every stage up to and including itself; stages
whose inputs are unchanged are served from the cache.
"""

import argparse
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv

from src.common.settings import LOG_LEVELS, RuntimeSettings

from .errors import LandscapeSAError, StageFailure
from .pipeline import STAGES, PipelineConfig, run_pipeline

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="landscape_sa",
        description="Factorial sensitivity analysis of a landscape nitrogen simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES + ("run",):
        help_text = "all stages" if name == "run" else f"stages up to {name}"
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment JSON document")
        p.add_argument("--jobs", type=int, default=None, help="simulation worker processes (LANDSA_JOBS)")
        p.add_argument("--seed", type=int, default=None, help="overrides the seed in the config")
        p.add_argument("--out", default=None, help="artifact directory (LANDSA_OUT_DIR)")
        p.add_argument("--stage-from", choices=STAGES, default=None,
                       help="recompute this stage and everything after it")
        p.add_argument("--log-level", choices=LOG_LEVELS, default=None, help="LANDSA_LOG_LEVEL")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    try:
        settings = RuntimeSettings.from_env(jobs=args.jobs, log_level=args.log_level, out_dir=args.out)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    settings.configure_logging()

    try:
        config = PipelineConfig.from_file(args.config, seed=args.seed)
    except ValueError as exc:
        logger.error("invalid config: %s", exc)
        return EXIT_USAGE

    until = "report" if args.command == "run" else args.command
    out_dir = settings.out_dir or config.out_dir
    try:
        result = run_pipeline(config, out_dir, settings.jobs, until=until, stage_from=args.stage_from)
    except StageFailure as exc:
        logger.error("%s", exc)
        return EXIT_FAILED
    except LandscapeSAError as exc:
        logger.error("pipeline failed: %s", exc)
        return EXIT_FAILED

    logger.info("done: %d artifacts, %d simulations, stages run: %s", len(result.manifest),
                result.stats["simulations"], ", ".join(result.executed) or "none (cached)")
    return EXIT_OK
