#!/usr/bin/env python3
"""
Multi-seed directional experiments on the synthetic 3-domain stream.

Three experiments, each run over several seeds at desk scale:

- forgetting: GaitAdapter keeps at least 10 more source rank-1 points than SFT
  and more than LwF.
- ablation: Base < Base+GPAK, Base < Base+EDSN, both <= GaitAdapter, Base
  at least 2 points below GaitAdapter.
- partition: 16 parts are not worse than 1 part on final average rank-1.

Exit code 0 when the selected experiment's ordering holds, 1 otherwise.
"""

from __future__ import annotations

import argparse
import logging
import statistics
import sys
from collections.abc import Sequence
from pathlib import Path

from gaitadapt.config.settings import get_config
from gaitadapt.errors.exceptions import GaitAdaptError
from gaitadapt.schemas.report import EvalReport
from gaitadapt.services.experiment import cmd_backtest, cmd_compare, cmd_synth, cmd_train

logger = logging.getLogger(__name__)

DOMAINS = 3
IDS_PER_DOMAIN = 10
SEQS_PER_ID = 6
FORGETTING_MARGIN = 10.0
# Domains differ strongly enough that plain fine-tuning overwrites the source
DOMAIN_SEVERITY = 1.0
DESK_ITERATIONS = 500
ABLATION_MARGIN = 2.0
# Run-to-run noise allowed for the partition non-inferiority check
PARTITION_TOLERANCE = 2.0

DESK_CONFIG = """\
method={method}
seed={seed}
stream_dir={stream_dir}
identities_per_batch=8
samples_per_identity=4
sequence_length=10
frame_height=32
frame_width=22
channels=32
feature_height=16
parts={parts}
repository_size=64
learning_rate=0.001
# Every step trains at the full rate; a decay across steps would leave later
# domains untrained and hide forgetting
lr_milestones=
iterations_per_step={iterations}
"""


def write_desk_config(
    root: Path, stream_dir: Path, method: str, seed: int, iterations: int, parts: int
) -> Path:
    tag = method.replace("+", "-")
    path = root / f"{tag}-m{parts}-seed{seed}.env"
    path.write_text(
        DESK_CONFIG.format(
            method=method,
            seed=seed,
            stream_dir=stream_dir.resolve(),
            iterations=iterations,
            parts=parts,
        )
    )
    return path


def run_variant(
    root: Path, stream_dir: Path, method: str, seed: int, iterations: int, parts: int = 16
) -> tuple[Path, EvalReport]:
    """Train and backtest one (method, parts) variant on one seed's stream."""
    config_path = write_desk_config(root, stream_dir, method, seed, iterations, parts)
    run_dir = root / "runs" / config_path.stem
    cmd_train(config_path, run_dir, force=True)
    return run_dir, cmd_backtest(run_dir)


def run_seed(
    root: Path,
    seed: int,
    variants: Sequence[tuple[str, int]],
    iterations: int,
    length: int,
) -> dict[tuple[str, int], EvalReport]:
    seed_root = root / f"seed{seed}"
    stream_dir = seed_root / "stream"
    cmd_synth(
        stream_dir,
        DOMAINS,
        IDS_PER_DOMAIN,
        SEQS_PER_ID,
        seed,
        length=length,
        height=32,
        width=22,
        severity=DOMAIN_SEVERITY,
        force=True,
    )
    reports: dict[tuple[str, int], EvalReport] = {}
    run_dirs = []
    for method, parts in variants:
        run_dir, report = run_variant(seed_root, stream_dir, method, seed, iterations, parts)
        reports[(method, parts)] = report
        run_dirs.append(run_dir)
        logger.info(
            f"seed={seed} {method} m={parts}: source={report.source_accuracy:.2f} "
            f"average={report.average_accuracy:.2f}"
        )
    cmd_compare(run_dirs, seed_root)
    return reports


def _means(
    per_seed: Sequence[dict[tuple[str, int], EvalReport]], metric: str
) -> dict[tuple[str, int], float]:
    variants = per_seed[0].keys()
    return {
        v: statistics.fmean(getattr(reports[v], metric) or 0.0 for reports in per_seed)
        for v in variants
    }


def check_forgetting(means: dict[tuple[str, int], float]) -> bool:
    full, sft, lwf = means[("GaitAdapter", 16)], means[("SFT", 16)], means[("LwF", 16)]
    logger.info(f"Mean source rank-1: GaitAdapter={full:.2f} LwF={lwf:.2f} SFT={sft:.2f}")
    return full >= sft + FORGETTING_MARGIN and full > lwf


def check_ablation(means: dict[tuple[str, int], float]) -> bool:
    base = means[("Base", 16)]
    gpak = means[("Base+GPAK", 16)]
    edsn = means[("Base+EDSN", 16)]
    full = means[("GaitAdapter", 16)]
    logger.info(
        f"Mean source rank-1: Base={base:.2f} Base+GPAK={gpak:.2f} "
        f"Base+EDSN={edsn:.2f} GaitAdapter={full:.2f}"
    )
    return (
        base < gpak <= full
        and base < edsn <= full
        and full - base >= ABLATION_MARGIN
    )


def check_partition(means: dict[tuple[str, int], float]) -> bool:
    single, sixteen = means[("GaitAdapter", 1)], means[("GaitAdapter", 16)]
    logger.info(f"Mean final average rank-1: m=1 {single:.2f}, m=16 {sixteen:.2f}")
    return sixteen >= single - PARTITION_TOLERANCE


EXPERIMENTS = {
    "forgetting": ([("SFT", 16), ("LwF", 16), ("GaitAdapter", 16)], "source_accuracy", check_forgetting),
    "ablation": (
        [("Base", 16), ("Base+GPAK", 16), ("Base+EDSN", 16), ("GaitAdapter", 16)],
        "source_accuracy",
        check_ablation,
    ),
    "partition": ([("GaitAdapter", 1), ("GaitAdapter", 16)], "average_accuracy", check_partition),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("experiment", choices=sorted(EXPERIMENTS))
    parser.add_argument("--out-dir", type=Path, default=Path("directional"))
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--iterations", type=int, default=DESK_ITERATIONS)
    parser.add_argument("--length", type=int, default=10, help="Frames per synthetic sequence")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=get_config().log_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    variants, metric, check = EXPERIMENTS[args.experiment]
    try:
        per_seed = [
            run_seed(args.out_dir, seed, variants, args.iterations, args.length)
            for seed in range(args.seeds)
        ]
    except GaitAdaptError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code

    if check(_means(per_seed, metric)):
        logger.info(f"{args.experiment}: ordering holds over {args.seeds} seed(s)")
        return 0
    logger.warning(f"{args.experiment}: ordering does not hold over {args.seeds} seed(s)")
    return 1


if __name__ == "__main__":
    sys.exit(main())
