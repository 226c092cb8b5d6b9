"""
The mimo command line: dataset generation, training, evaluation, shape
reconstruction, pose transfer and the grasp learning pipeline.

Usage:
    poetry run mimo gen-dataset --seed 0 --out runs/data
    poetry run mimo train --dataset runs/data/dataset --out runs/model -v
    poetry run mimo grasp-pipeline --checkpoint runs/model/model.ckpt --demo demo.json --out runs/grasp

Every command writes report.json into its output directory, also when it
fails. The exit code is 0 on success, 2 for invalid configuration, 3 for
unusable data and 4 for numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from mimo import __version__
from mimo.errors import MimoError
from utils.time import Stopwatch

from .commands import COMMANDS, Report
from .config import load_run_config

logger = logging.getLogger(__name__)


def _positive(s: str) -> int:
    try:
        v = int(s)
    except ValueError as e:
        raise argparse.ArgumentTypeError("must be an integer") from e
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="run seed (overrides the config)")
    p.add_argument("--out", dest="out_dir", help="output directory (overrides the config)")
    p.add_argument("--threads", type=_positive, help="worker threads for batch commands")
    p.add_argument("--category", action="append", dest="categories", help="shape family; repeatable")
    p.add_argument("-v", "--verbose", action="store_true", help="verbose logging and progress bars")
    return p


def build_parser() -> argparse.ArgumentParser:
    """
    Build the argument parser for the mimo command line.

    Returns:
        An argparse.ArgumentParser with one subparser per command.
    """
    common = _common()
    p = argparse.ArgumentParser(prog="mimo", description="Multi-feature implicit fields for shape and pose transfer.")
    p.add_argument("--version", action="version", version=f"mimo {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-dataset", parents=[common], help="generate procedural shapes and feature samples")

    s = sub.add_parser("train", parents=[common], help="train a field on a generated dataset")
    s.add_argument("--dataset", required=True, help="dataset directory")
    s.add_argument("--resume", help="checkpoint to continue from")

    s = sub.add_parser("eval", parents=[common], help="score a trained field")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--baseline", help="checkpoint of a single-branch model to compare reconstruction against")
    s.add_argument("--limit", type=_positive, help="evaluate only the first N shapes")

    s = sub.add_parser("reconstruct", parents=[common], help="extract a mesh from an observed cloud")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--cloud", required=True, help="PLY point cloud")
    s.add_argument("--spec", help="shape spec JSON of the ground truth, for IoU")

    s = sub.add_parser("transfer", parents=[common], help="transfer a demonstrated pose to a novel object")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--checkpoint-b", help="field of the receiving object, when it differs")
    s.add_argument("--demo", required=True, help="demonstration JSON")
    s.add_argument("--cloud", required=True, help="novel object cloud (PLY)")
    s.add_argument("--target-cloud", help="novel receiving object cloud; switches to rearrangement")

    s = sub.add_parser("grasp-pipeline", parents=[common], help="learn grasps from one demonstration and run trials")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--demo", required=True)

    s = sub.add_parser("fit-gmm", parents=[common], help="fit a pose mixture to grasp candidates")
    s.add_argument("--candidates", required=True, help="candidates JSONL")
    s.add_argument("--components", type=_positive, help="fixed mixture size; BIC selection otherwise")

    s = sub.add_parser("train-evaluator", parents=[common], help="train the grasp evaluator on labeled grasps")
    s.add_argument("--checkpoint", required=True, help="field whose encoder is reused")
    s.add_argument("--samples", required=True, help="labeled grasps JSONL")
    return p


def main(argv: list[str] | None = None) -> int:
    """
    Main entry point for the mimo CLI.

    Args:
        argv: List of command-line arguments. If None, uses sys.argv.

    Returns:
        Exit code (0 for success, non-zero for failure).
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="[mimo] %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    report = Report(command=args.command)
    out_dir = args.out_dir or "out"
    code = 0
    with Stopwatch() as watch:
        try:
            config = load_run_config(
                args.config,
                seed=args.seed,
                out_dir=args.out_dir,
                threads=args.threads,
                categories=args.categories,
            )
            out_dir = config.out_dir
            report.config = config.to_dict()
            if args.categories:
                config = config.with_block("pipeline", category=config.categories[0])
            COMMANDS[args.command](config, args, report)
        except MimoError as e:
            print(f"[mimo] {e.name}: {e}", file=sys.stderr)
            report.error(e)
            code = int(e.exit_code)
        except KeyboardInterrupt:
            print("\n[mimo] interrupted", file=sys.stderr)
            code = 130
    report.wall_clock = watch.seconds
    path = report.write(out_dir)
    logger.info("report written to %s", path)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
