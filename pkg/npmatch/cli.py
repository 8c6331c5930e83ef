# npmatch/cli.py
"""Command-line entry point: ``python -m npmatch <command> [options]``."""

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from npmatch.commands import COMMANDS, exit_code
from npmatch.config import PRESETS

logger = logging.getLogger(__name__)


def configure_logging() -> None:
    load_dotenv()
    logging.basicConfig(
        level=os.getenv("NPMATCH_LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


def _add_run_config_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value run config file")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="named hyperparameter overlay")
    parser.add_argument("--seed", type=int, help="training seed (overrides the config)")
    parser.add_argument("--out-dir", dest="out_dir", help="output directory (default $NPMATCH_OUT_DIR or runs/)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key; repeatable",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="npmatch", description="Neural-Process pseudo-labeling at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train and write metrics.csv, report.json and checkpoint.json")
    _add_run_config_options(train)

    evaluate = sub.add_parser("eval", help="evaluate the EMA model stored in a checkpoint")
    evaluate.add_argument("checkpoint")
    _add_run_config_options(evaluate)

    divergence = sub.add_parser("check-divergence", help="closed-form JS_G vs Monte-Carlo oracle")
    divergence.add_argument("--dims", type=int, nargs="+", default=[1, 2, 3, 4])
    divergence.add_argument("--trials", type=int, default=50)
    divergence.add_argument("--samples", type=int, default=1_000_000)
    divergence.add_argument("--seed", type=int, default=0)
    divergence.add_argument("--corrupt-formula", dest="corrupt_formula", action="store_true", help=argparse.SUPPRESS)

    grad = sub.add_parser("grad-check", help="finite-difference gradient suite")
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--trials", type=int, default=20)

    compare = sub.add_parser("compare", help="full method vs supervised-only ablation over seeds")
    _add_run_config_options(compare)
    compare.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])

    export = sub.add_parser("export-data", help="write the configured dataset as CSV")
    _add_run_config_options(export)
    export.add_argument("--path", help="CSV path (default <out-dir>/dataset.csv)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    params = vars(args)
    command = COMMANDS[params.pop("command")]
    logger.info(f"[cli] running {command.name}")
    response = command.execute(params)
    print(json.dumps(response, indent=2, sort_keys=True))
    return exit_code(response)


if __name__ == "__main__":
    sys.exit(main())
