from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv

from deep_bow.configs.logging_config import env_level, set_level, setup_logging
from deep_bow.errors import DeepBowError
from deep_bow.routes.commands import COMMANDS

load_dotenv()
setup_logging()
# modules imported above may have configured logging before .env was read
set_level(env_level())
logger = logging.getLogger(__name__)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON pipeline config")
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--jobs", type=int, default=None, help="worker cap")
    parser.add_argument("--family", choices=["deep-bow", "raw-bow", "region-mean"], default=None)
    parser.add_argument("--scenario", choices=["per-metric", "stacked"], default=None)
    parser.add_argument("--words", type=int, default=None, help="codebook size per scope")
    parser.add_argument("--manifest", default=None, help="dataset manifest JSON")
    parser.add_argument("--protocol", choices=["cv", "heldout", "both"], default=None)
    parser.add_argument("--strict", action="store_true", default=None, help="fail on solver non-convergence")
    parser.add_argument(
        "--strict-leakage",
        dest="strict_leakage",
        action="store_true",
        default=None,
        help="retrain auto-encoders on every training side",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deep-bow",
        description="Deep bag-of-words classification of regional diffusion MR metrics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a mean-matched phantom cohort")
    synth.add_argument("--subjects", type=int, default=114)
    synth.add_argument("--patients", type=int, default=70)
    synth.add_argument("--seed", type=int, default=None)
    synth.add_argument("--effect-size", dest="effect_size", type=float, default=0.6)
    synth.add_argument("--lesion-fraction", dest="lesion_fraction", type=float, default=0.5)
    synth.add_argument("--clinical-gap", dest="clinical_gap", type=float, default=0.0)
    synth.add_argument("--out", default=None, help="dataset directory")
    synth.add_argument("--verbose", action="store_true")

    for name, help_text in (
        ("extract", "extract patches into <out>/patches"),
        ("train-cae", "train the auto-encoders on the whole cohort"),
        ("build-vocab", "fit codebooks on the whole cohort"),
        ("featurize", "write <out>/features.csv"),
        ("run", "run every stage the config asks for"),
    ):
        _common(sub.add_parser(name, help=help_text))

    for name, help_text in (
        ("evaluate", "repeated-split cross-validation"),
        ("holdout", "held-out ensemble evaluation"),
    ):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        p.add_argument("--features", default=None, help="precomputed feature CSV")
        p.add_argument("--repeats", type=int, default=None)

    compare = sub.add_parser("compare", help="tabulate several reports")
    compare.add_argument("reports", nargs="+")
    compare.add_argument("--out", default=None)
    compare.add_argument("--verbose", action="store_true")

    report = sub.add_parser("report", help="render a report JSON as text")
    report.add_argument("report")
    report.add_argument("--verbose", action="store_true")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        set_level("DEBUG")
    try:
        return COMMANDS[args.command](args)
    except DeepBowError as e:
        logger.error(f"[{e.stage or args.command}] {type(e).__name__}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
