"""Per-step checkpoint archives."""

from __future__ import annotations

import io
import logging
from pathlib import Path
from typing import Any

import torch

from gaitadapt.core.model import build_model, state_digest
from gaitadapt.data.ingest import write_atomic
from gaitadapt.errors.exceptions import CheckpointError
from gaitadapt.schemas.manifest import CheckpointManifest
from gaitadapt.schemas.training import TrainConfig
from gaitadapt.services.telemetry import TrainingTelemetry
from gaitadapt.services.trainer import TrainState, snapshot

logger = logging.getLogger(__name__)


def checkpoint_name(step: int) -> str:
    return f"step_{step:02d}.pt"


def save_checkpoint(path: Path, state: TrainState, config: TrainConfig) -> CheckpointManifest:
    """Write the model after `state.completed_steps` steps as one archive."""
    model = state.model
    manifest = CheckpointManifest(
        step=state.completed_steps,
        method=config.method,
        embedding_width=model.settings.embedding_width,
        parts=model.settings.parts,
        channels=model.settings.channels,
        repository_size=model.settings.repository_size,
        class_count=model.class_count,
        class_index=dict(state.class_index),
        digest=state_digest(model),
    )
    buffer = io.BytesIO()
    torch.save(
        {
            "manifest": manifest.model_dump(mode="json"),
            "state": {k: v.detach().cpu() for k, v in model.state_dict().items()},
            "telemetry": state.telemetry.to_dict(),
        },
        buffer,
    )
    write_atomic(path, buffer.getvalue())
    logger.info(f"Saved checkpoint for step {manifest.step} to {path}")
    return manifest


def read_checkpoint_manifest(path: Path, step: int | None = None) -> CheckpointManifest:
    return CheckpointManifest.model_validate(_read_archive(path, step)["manifest"])


def _read_archive(path: Path, step: int | None) -> dict[str, Any]:
    if not path.is_file():
        raise CheckpointError(f"Checkpoint for step {step} not found: {path}", step=step)
    try:
        return torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"Checkpoint for step {step} is unreadable: {path}: {e}", step=step) from e


def load_checkpoint(
    path: Path,
    config: TrainConfig,
    step: int | None = None,
    device: torch.device | str = "cpu",
) -> TrainState:
    """Rebuild a TrainState (model, classes, snapshot, telemetry) from an archive."""
    archive = _read_archive(path, step)
    manifest = CheckpointManifest.model_validate(archive["manifest"])
    if step is not None and manifest.step != step:
        raise CheckpointError(
            f"Checkpoint {path} holds step {manifest.step}, expected step {step}", step=step
        )

    model = build_model(config, device=device)
    if model.settings.embedding_width != manifest.embedding_width:
        raise CheckpointError(
            f"Checkpoint embedding width {manifest.embedding_width} does not match the config"
            f" ({model.settings.embedding_width})",
            step=manifest.step,
        )
    model.head.resize_(manifest.class_count)
    try:
        model.load_state_dict(archive["state"])
    except RuntimeError as e:
        raise CheckpointError(f"Checkpoint {path} does not fit the model: {e}", step=manifest.step) from e
    model.eval()
    if state_digest(model) != manifest.digest:
        raise CheckpointError(f"Checkpoint {path} failed its digest check", step=manifest.step)

    state = TrainState(
        model=model,
        step=manifest.step + 1,
        class_index=dict(manifest.class_index),
        telemetry=TrainingTelemetry.from_dict(archive.get("telemetry", {})),
    )
    state.snapshot = snapshot(state)
    return state
