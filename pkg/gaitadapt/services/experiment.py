"""Experiment commands: synth, train, backtest, compare, report."""

from __future__ import annotations

import csv
import io
import json
import logging
import shutil
import time
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from gaitadapt import __version__
from gaitadapt.config.loader import load_train_config
from gaitadapt.config.settings import get_config
from gaitadapt.data.ingest import (
    export_directory,
    load_stream,
    read_stream_manifest,
    stream_digest,
    write_atomic,
)
from gaitadapt.data.protocol import StreamConfig, build_stream
from gaitadapt.data.sequence import StepDataset
from gaitadapt.data.synthetic import generate_dataset, generate_domain_stream
from gaitadapt.errors.exceptions import ConfigError, DataError, FairnessError, ValidationError
from gaitadapt.schemas.common import ProtocolTag
from gaitadapt.schemas.manifest import (
    ComparisonManifest,
    ComparisonRow,
    ExperimentManifest,
    StreamManifest,
)
from gaitadapt.schemas.report import EvalReport
from gaitadapt.schemas.training import TrainConfig, TrainingLogRecord
from gaitadapt.services.checkpoint import checkpoint_name, load_checkpoint, save_checkpoint
from gaitadapt.services.evaluation import backtest
from gaitadapt.services.plots import plot_accuracy_curves, plot_heat_grid
from gaitadapt.services.run_lock import LOCK_NAME, RunLock
from gaitadapt.services.trainer import TrainState, init_state, run_stream

logger = logging.getLogger(__name__)

RUN_MANIFEST = "manifest.json"
TRAIN_LOG = "train_log.jsonl"
REPORT_FILES = {
    "csv": "report.csv",
    "summary": "report.md",
    "heat_grid": "heat_grid.png",
    "curves": "accuracy_curves.png",
}
COMPARISON_FILES = {"summary": "comparison.md", "csv": "comparison.csv"}
COMPARISON_MANIFEST = "comparison.json"


def _is_non_empty(path: Path) -> bool:
    return path.exists() and any(p.name != LOCK_NAME for p in path.iterdir())


def split_stream(steps: Sequence[StepDataset]) -> tuple[list[StepDataset], list[StepDataset]]:
    """(training steps in order, evaluation-only steps)."""
    training = [s for s in steps if not s.is_evaluation_only]
    unseen = [s for s in steps if s.is_evaluation_only]
    return training, unseen


def read_run_manifest(path: Path) -> tuple[Path, ExperimentManifest]:
    """Accept a run directory or its manifest file."""
    manifest_path = path / RUN_MANIFEST if path.is_dir() else path
    if not manifest_path.is_file():
        raise DataError(f"Run manifest not found: {manifest_path}")
    return manifest_path.parent, ExperimentManifest.model_validate_json(manifest_path.read_text())


def write_run_manifest(run_dir: Path, manifest: ExperimentManifest) -> None:
    write_atomic(run_dir / RUN_MANIFEST, manifest.model_dump_json(indent=2).encode())


def synthesize_stream(
    protocol: ProtocolTag,
    n_domains: int,
    ids_per_domain: int,
    seqs_per_id: int,
    seed: int,
    *,
    unseen_domains: int = 0,
    partitions: int = 2,
    length: int = 30,
    height: int = 64,
    width: int = 44,
    severity: float = 0.5,
) -> list[StepDataset]:
    """
    Build a synthetic stream for one evaluation protocol.

    The plain cross-domain stream splits every subject's sequences into train,
    gallery and probe. Any other protocol, or a stream with evaluation-only
    domains, draws each domain with separate train and test identity pools
    (half of the identities each, rounded in favour of training).
    """
    rng = np.random.default_rng(seed)
    render = {"length": length, "height": height, "width": width, "severity": severity}
    if protocol is ProtocolTag.UNSEEN:
        raise ConfigError("unseen domains are added with unseen_domains, not as a protocol")
    if protocol is ProtocolTag.CROSS_INDEPENDENT and unseen_domains == 0:
        return generate_domain_stream(n_domains, ids_per_domain, seqs_per_id, rng, **render)
    if ids_per_domain < 2:
        raise ValidationError("ids_per_domain must be >= 2 to fill train and test pools")

    n_test = ids_per_domain // 2
    datasets = [
        generate_dataset(
            f"domain-{d}",
            d,
            ids_per_domain - n_test,
            n_test,
            seqs_per_id,
            rng,
            identity_offset=d * ids_per_domain,
            **render,
        )
        for d in range(n_domains + unseen_domains)
    ]
    config = StreamConfig(partitions=partitions, seed=seed)
    return build_stream(protocol, datasets[:n_domains], config, unseen=datasets[n_domains:])


def cmd_synth(
    out_dir: Path,
    n_domains: int,
    ids_per_domain: int,
    seqs_per_id: int,
    seed: int,
    *,
    protocol: ProtocolTag = ProtocolTag.CROSS_INDEPENDENT,
    unseen_domains: int = 0,
    partitions: int = 2,
    length: int = 30,
    height: int = 64,
    width: int = 44,
    severity: float = 0.5,
    force: bool = False,
) -> StreamManifest:
    """Generate a synthetic stream for `protocol` and write it in the ingest layout."""
    if _is_non_empty(out_dir):
        if not force:
            raise DataError(f"Refusing to write into non-empty directory {out_dir} (use --force)")
        logger.info(f"Clearing {out_dir}")
        shutil.rmtree(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with RunLock(out_dir):
        steps = synthesize_stream(
            protocol,
            n_domains,
            ids_per_domain,
            seqs_per_id,
            seed,
            unseen_domains=unseen_domains,
            partitions=partitions,
            length=length,
            height=height,
            width=width,
            severity=severity,
        )
        return export_directory(
            steps, out_dir, seed=seed, ids_per_domain=ids_per_domain, seqs_per_id=seqs_per_id
        )


def _default_run_dir(config_path: Path, config: TrainConfig) -> Path:
    return config_path.parent / "runs" / f"{config.method.value}-seed{config.seed}"


def _truncate_log(path: Path, completed_steps: int) -> None:
    if not path.is_file():
        return
    kept = [
        line
        for line in path.read_text().splitlines()
        if line.strip() and TrainingLogRecord.model_validate_json(line).step <= completed_steps
    ]
    write_atomic(path, "".join(f"{line}\n" for line in kept).encode())


def _stream_dir(config: TrainConfig) -> Path:
    if config.stream_dir is None:
        raise ConfigError("stream_dir is required to train", key="stream_dir")
    return config.stream_dir


def check_stream_resolution(stream_dir: Path, config: TrainConfig) -> None:
    """The stream's frames must match the configured frame size."""
    manifest = read_stream_manifest(stream_dir)
    for key, expected, actual in (
        ("frame_height", config.frame_height, manifest.height),
        ("frame_width", config.frame_width, manifest.width),
    ):
        if expected != actual:
            raise ConfigError(f"{key}={expected} but stream {stream_dir} has {actual}", key=key)


def cmd_train(
    config_path: Path,
    run_dir: Path | None = None,
    *,
    dry_run: bool = False,
    resume: bool = False,
    force: bool = False,
) -> ExperimentManifest | None:
    """
    Train every step of the configured stream.

    Writes one checkpoint per step, the JSON Lines training log and the run
    manifest (rewritten after each step). With `resume`, training restarts
    after the last checkpointed step.
    """
    config = load_train_config(config_path)
    stream_dir = _stream_dir(config)
    check_stream_resolution(stream_dir, config)
    if dry_run:
        digest = stream_digest(stream_dir)
        logger.info(f"Config {config_path} is valid; stream {stream_dir} ({digest[:12]})")
        return None

    run_dir = run_dir or _default_run_dir(config_path, config)
    run_dir.mkdir(parents=True, exist_ok=True)
    runtime = get_config()

    with RunLock(run_dir):
        manifest_path = run_dir / RUN_MANIFEST
        existing = manifest_path.is_file()
        if existing and not (resume or force):
            raise DataError(f"Run {run_dir} already exists (use --resume or --force)")

        steps = load_stream(stream_dir)
        digest = stream_digest(stream_dir)
        training, _ = split_stream(steps)
        if not training:
            raise DataError(f"Stream {stream_dir} has no training steps")

        log_path = run_dir / TRAIN_LOG
        state: TrainState
        if existing and resume:
            _, manifest = read_run_manifest(run_dir)
            if manifest.stream_digest != digest:
                raise FairnessError(f"Stream {stream_dir} changed since run {run_dir} started")
            if TrainConfig.model_validate(manifest.config) != config:
                raise ConfigError(f"Config differs from the one run {run_dir} started with")
            done = manifest.completed_steps
            if done:
                state = load_checkpoint(
                    run_dir / manifest.checkpoints[done], config, step=done, device=runtime.device
                )
            else:
                state = init_state(config, device=runtime.device)
            _truncate_log(log_path, done)
            logger.info(f"Resuming {run_dir} after step {done}")
        else:
            manifest = ExperimentManifest(
                code_version=__version__,
                method=config.method,
                seed=config.seed,
                config=config.model_dump(mode="json"),
                stream_dir=str(stream_dir),
                stream_digest=digest,
                step_names=[s.name for s in training],
                train_log=TRAIN_LOG,
            )
            log_path.unlink(missing_ok=True)
            for stale in run_dir.glob("step_*.pt"):
                stale.unlink()
            for report_name in REPORT_FILES.values():
                (run_dir / report_name).unlink(missing_ok=True)
            state = init_state(config, device=runtime.device)
        write_run_manifest(run_dir, manifest)

        step_started = time.time()
        with log_path.open("a") as log_file:

            def sink(record: TrainingLogRecord) -> None:
                log_file.write(record.model_dump_json() + "\n")

            def on_step_complete(done_state: TrainState) -> None:
                nonlocal manifest, step_started
                log_file.flush()
                step = done_state.completed_steps
                name = checkpoint_name(step)
                save_checkpoint(run_dir / name, done_state, config)
                manifest = manifest.model_copy(
                    update={
                        "completed_steps": step,
                        "checkpoints": {**manifest.checkpoints, step: name},
                        "timings": {
                            **manifest.timings,
                            f"train_step_{step}": time.time() - step_started,
                        },
                        "telemetry": json.loads(json.dumps(done_state.telemetry.to_dict())),
                    }
                )
                write_run_manifest(run_dir, manifest)
                step_started = time.time()

            run_stream(state, training, config, log_sink=sink, on_step_complete=on_step_complete)

    logger.info(f"Run {run_dir} completed {manifest.completed_steps} step(s)")
    return manifest


def _write_report_files(run_dir: Path, report: EvalReport, title: str) -> dict[str, str]:
    write_atomic(run_dir / REPORT_FILES["csv"], report.to_csv().encode())
    write_atomic(run_dir / REPORT_FILES["summary"], f"# {title}\n\n{report.to_markdown()}".encode())
    plot_heat_grid(report, run_dir / REPORT_FILES["heat_grid"], title=title)
    plot_accuracy_curves(report, run_dir / REPORT_FILES["curves"], title=title)
    return dict(REPORT_FILES)


def cmd_backtest(path: Path) -> EvalReport:
    """
    Evaluate each step checkpoint on every test set seen so far.

    After step s the model is scored on the test sets of training steps
    1..s and on every evaluation-only set, giving a lower-triangular matrix.
    """
    run_dir, manifest = read_run_manifest(path)
    config = TrainConfig.model_validate(manifest.config)
    runtime = get_config()
    if manifest.completed_steps < 1:
        raise DataError(f"Run {run_dir} has no completed step")

    with RunLock(run_dir):
        stream_dir = Path(manifest.stream_dir)
        if stream_digest(stream_dir) != manifest.stream_digest:
            raise DataError(f"Stream {stream_dir} changed since run {run_dir} was trained")
        training, unseen = split_stream(load_stream(stream_dir))

        started = time.time()
        report = EvalReport(
            test_sets={s.name: s.protocol for s in training[: manifest.completed_steps] + unseen}
        )
        for step in range(1, manifest.completed_steps + 1):
            name = manifest.checkpoints.get(step, checkpoint_name(step))
            state = load_checkpoint(run_dir / name, config, step=step, device=runtime.device)
            row = backtest(
                state.model,
                step,
                training[:step] + unseen,
                config.sequence_length,
                runtime.eval_batch_size,
            )
            report.rows.append(row)

        title = f"{manifest.method.value} (seed {manifest.seed})"
        reports = _write_report_files(run_dir, report, title)
        manifest = manifest.model_copy(
            update={
                "reports": reports,
                "timings": {**manifest.timings, "backtest": time.time() - started},
            }
        )
        write_run_manifest(run_dir, manifest)

    logger.info(
        f"Backtest of {run_dir}: source {report.source_accuracy}, target {report.target_accuracy}"
    )
    return report


def load_run_report(run_dir: Path, manifest: ExperimentManifest) -> EvalReport:
    name = manifest.reports.get("csv")
    if name is None or not (run_dir / name).is_file():
        raise DataError(f"Run {run_dir} has no backtest report (run `backtest` first)")
    return EvalReport.from_csv((run_dir / name).read_text())


def cmd_report(path: Path) -> EvalReport:
    """Re-render summary and figures from an existing report CSV."""
    run_dir, manifest = read_run_manifest(path)
    report = load_run_report(run_dir, manifest)
    with RunLock(run_dir):
        _write_report_files(run_dir, report, f"{manifest.method.value} (seed {manifest.seed})")
    return report


def comparison_rows(runs: Sequence[tuple[str, ExperimentManifest, EvalReport]]) -> list[ComparisonRow]:
    """Final-step source/target/average per run, with deltas against the first run."""

    def final(report: EvalReport) -> tuple[float, float, float]:
        return (
            report.source_accuracy or 0.0,
            report.target_accuracy or 0.0,
            report.average_accuracy or 0.0,
        )

    base = final(runs[0][2])
    rows = []
    for name, manifest, report in runs:
        source, target, average = final(report)
        rows.append(
            ComparisonRow(
                run=name,
                method=manifest.method,
                source=source,
                target=target,
                average=average,
                delta_source=source - base[0],
                delta_target=target - base[1],
                delta_average=average - base[2],
            )
        )
    return rows


def comparison_markdown(rows: Sequence[ComparisonRow]) -> str:
    lines = [
        "| run | method | source | target | average | Δ source | Δ target | Δ average |",
        "|---|---|---|---|---|---|---|---|",
    ]
    for r in rows:
        lines.append(
            f"| {r.run} | {r.method.value} | {r.source:.2f} | {r.target:.2f} | {r.average:.2f}"
            f" | {r.delta_source:+.2f} | {r.delta_target:+.2f} | {r.delta_average:+.2f} |"
        )
    return "\n".join(lines) + "\n"


def comparison_csv(rows: Sequence[ComparisonRow]) -> str:
    buffer = io.StringIO()
    fields = list(ComparisonRow.model_fields)
    writer = csv.DictWriter(buffer, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(json.loads(row.model_dump_json()))
    return buffer.getvalue()


def cmd_compare(paths: Sequence[Path], out_dir: Path | None = None) -> list[ComparisonRow]:
    """
    Side-by-side comparison of finished runs.

    All runs must share the stream (by manifest digest) and the seed.
    """
    if len(paths) < 2:
        raise ConfigError("compare needs at least two runs")
    runs: list[tuple[str, ExperimentManifest, EvalReport]] = []
    run_dirs: list[Path] = []
    for path in paths:
        run_dir, manifest = read_run_manifest(path)
        runs.append((run_dir.name, manifest, load_run_report(run_dir, manifest)))
        run_dirs.append(run_dir)
    names = [name for name, _, _ in runs]

    first = runs[0][1]
    for name, manifest, _ in runs[1:]:
        if manifest.stream_digest != first.stream_digest:
            raise FairnessError(f"Run {name} was trained on a different stream than {runs[0][0]}")
        if manifest.seed != first.seed:
            raise FairnessError(
                f"Run {name} uses seed {manifest.seed}, {runs[0][0]} uses seed {first.seed}"
            )

    rows = comparison_rows(runs)
    if out_dir is not None:
        write_atomic(out_dir / COMPARISON_FILES["summary"], comparison_markdown(rows).encode())
        write_atomic(out_dir / COMPARISON_FILES["csv"], comparison_csv(rows).encode())
        record = ComparisonManifest(
            code_version=__version__,
            seed=first.seed,
            stream_digest=first.stream_digest,
            runs={name: str(run_dir) for name, run_dir in zip(names, run_dirs, strict=True)},
            files=dict(COMPARISON_FILES),
        )
        write_atomic(out_dir / COMPARISON_MANIFEST, record.model_dump_json(indent=2).encode())
        logger.info(f"Wrote comparison of {len(rows)} runs to {out_dir}")
    return rows
