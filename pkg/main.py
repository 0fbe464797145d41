# Command-line entry point for the trajectory-guidance harness
# Subcommands: sample, solve, sweep, gradcheck, oracle, train

import os
import sys
import argparse
import logging
from typing import List, Optional, get_args

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)

from core_utils.errors import ConfigError, GuidanceError, UsageError
from harness.config import Method, load_config
from harness.runner import run_gradcheck, run_oracle, run_sample, run_solve, run_sweep, run_train

EXIT_RUNTIME_FAILURE = 1
EXIT_USAGE = 2

COMMANDS = ("sample", "solve", "sweep", "gradcheck", "oracle", "train")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ndtm",
        description="Guided diffusion sampling by per-step trajectory matching on desk-scale problems.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="path to the JSON run config")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    parser.add_argument("--out", default=None, help="output directory (default: $NDTM_OUTPUT_DIR or ./runs)")
    parser.add_argument("--method", default=None, choices=get_args(Method), help="overrides the config method")
    parser.add_argument("--log-level", default=os.getenv("NDTM_LOG_LEVEL", "INFO"))
    return parser


def dispatch(args: argparse.Namespace) -> int:
    if args.seed is not None and args.seed < 0:
        raise UsageError(f"--seed must be a non-negative integer, got {args.seed}")
    cfg = load_config(args.config, seed=args.seed, output_dir=args.out, method=args.method)
    out_dir = cfg.resolved_output_dir()

    if args.command == "sample":
        run_sample(cfg, out_dir)
    elif args.command == "solve":
        record = run_solve(cfg, out_dir)
        print(record.model_dump_json(exclude={"per_trajectory"}, indent=2))
    elif args.command == "sweep":
        rows = run_sweep(cfg, out_dir)
        failed = sum(1 for r in rows if r[3] == "failed")
        print(f"{len(rows)} sweep points written to {out_dir / 'sweep.csv'} ({failed} failed)")
    elif args.command == "gradcheck":
        rows, passed = run_gradcheck(cfg, out_dir)
        print(f"{sum(r[2] for r in rows)}/{len(rows)} gradient checks passed")
        return 0 if passed else EXIT_RUNTIME_FAILURE
    elif args.command == "oracle":
        rows = run_oracle(cfg, out_dir)
        return 0 if all(r[3] for r in rows) else EXIT_RUNTIME_FAILURE
    else:
        path = run_train(cfg, out_dir)
        print(f"Model written to {path}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except (ConfigError, UsageError) as e:
        logger.error(f"Invalid usage: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except GuidanceError as e:
        logger.error(f"Run failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME_FAILURE


if __name__ == "__main__":
    sys.exit(main())
