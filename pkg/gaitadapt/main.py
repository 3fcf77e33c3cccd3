"""Command-line entrypoint."""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

import torch

from gaitadapt.config.settings import get_config
from gaitadapt.errors.exceptions import GaitAdaptError
from gaitadapt.schemas.common import ProtocolTag
from gaitadapt.services.experiment import (
    cmd_backtest,
    cmd_compare,
    cmd_report,
    cmd_synth,
    cmd_train,
    comparison_markdown,
)

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaitadapt",
        description="Continual gait recognition experiments on silhouette streams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="Generate a synthetic multi-domain stream")
    synth.add_argument("out_dir", type=Path)
    synth.add_argument("--domains", type=int, default=3)
    synth.add_argument("--ids", type=int, default=10, help="identities per domain")
    synth.add_argument("--seqs", type=int, default=6, help="sequences per identity")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--length", type=int, default=30)
    synth.add_argument("--height", type=int, default=64)
    synth.add_argument("--width", type=int, default=44)
    synth.add_argument("--severity", type=float, default=0.5, help="domain shift in [0, 1]")
    synth.add_argument(
        "--protocol",
        choices=[p.value for p in ProtocolTag if p is not ProtocolTag.UNSEEN],
        default=ProtocolTag.CROSS_INDEPENDENT.value,
    )
    synth.add_argument("--unseen", type=int, default=0, help="extra evaluation-only domains")
    synth.add_argument("--partitions", type=int, default=2, help="steps of the inner protocol")
    synth.add_argument("--force", action="store_true", help="overwrite a non-empty directory")

    train = sub.add_parser("train", help="Train a method over a stream")
    train.add_argument("config", type=Path, help="flat key=value config file")
    train.add_argument("--run-dir", type=Path, default=None)
    train.add_argument("--dry-run", action="store_true", help="validate the config and exit")
    train.add_argument("--resume", action="store_true", help="continue after the last checkpoint")
    train.add_argument("--force", action="store_true", help="restart an existing run")

    backtest = sub.add_parser("backtest", help="Evaluate every step checkpoint of a run")
    backtest.add_argument("run", type=Path, help="run directory or its manifest.json")

    compare = sub.add_parser("compare", help="Compare finished runs on the same stream and seed")
    compare.add_argument("runs", type=Path, nargs="+")
    compare.add_argument("--out-dir", type=Path, default=None)

    report = sub.add_parser("report", help="Re-render summary and figures from a report CSV")
    report.add_argument("run", type=Path)
    return parser


def run(args: argparse.Namespace) -> int:
    if args.command == "synth":
        manifest = cmd_synth(
            args.out_dir,
            args.domains,
            args.ids,
            args.seqs,
            args.seed,
            protocol=ProtocolTag(args.protocol),
            unseen_domains=args.unseen,
            partitions=args.partitions,
            length=args.length,
            height=args.height,
            width=args.width,
            severity=args.severity,
            force=args.force,
        )
        logger.info(f"Wrote {len(manifest.steps)} step(s) to {args.out_dir}")
    elif args.command == "train":
        cmd_train(
            args.config,
            args.run_dir,
            dry_run=args.dry_run,
            resume=args.resume,
            force=args.force,
        )
    elif args.command == "backtest":
        report = cmd_backtest(args.run)
        print(report.to_markdown())
    elif args.command == "compare":
        rows = cmd_compare(args.runs, args.out_dir)
        print(comparison_markdown(rows))
    elif args.command == "report":
        report = cmd_report(args.run)
        print(report.to_markdown())
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = get_config()
    logging.basicConfig(
        level=config.log_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    if config.num_threads > 0:
        torch.set_num_threads(config.num_threads)

    try:
        return run(args)
    except GaitAdaptError as e:
        component = getattr(e, "component", None)
        key = getattr(e, "key", None)
        step = getattr(e, "step", None)
        detail = ", ".join(
            f"{name}={value}"
            for name, value in (("component", component), ("key", key), ("step", step))
            if value is not None
        )
        logger.error(f"{type(e).__name__}: {e}" + (f" ({detail})" if detail else ""))
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
