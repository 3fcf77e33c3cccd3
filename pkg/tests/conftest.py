"""Pytest fixtures for gaitadapt tests."""

import os
from collections.abc import Generator
from pathlib import Path

import numpy as np
import pytest
import torch

from gaitadapt.config.settings import reset_config
from gaitadapt.data.sequence import SilhouetteSequence, StepDataset
from gaitadapt.data.synthetic import generate_domain_stream
from gaitadapt.schemas.common import MethodTag
from gaitadapt.schemas.training import TrainConfig


@pytest.fixture(autouse=True, scope="function")
def reset_runtime(tmp_path: Path) -> Generator[None]:
    """Reset the settings singleton and keep lock waits short for each test."""
    os.environ["GAITADAPT_LOCK_TIMEOUT"] = "0.3"
    os.environ["GAITADAPT_LOCK_POLL"] = "0.05"
    os.environ["GAITADAPT_EVAL_BATCH"] = "16"
    reset_config()

    yield

    reset_config()


def make_tiny_config(**overrides: object) -> TrainConfig:
    """A desk-second config: 16x12 frames, 8 channels, 4 parts."""
    values: dict[str, object] = {
        "method": MethodTag.GAITADAPTER,
        "seed": 3,
        "identities_per_batch": 3,
        "samples_per_identity": 2,
        "sequence_length": 6,
        "frame_height": 16,
        "frame_width": 12,
        "channels": 8,
        "feature_height": 4,
        "temporal_window": 2,
        "parts": 4,
        "repository_size": 6,
        "iterations_per_step": 2,
        "lr_milestones": (),
        "dtype": "float64",
        "log_every": 1,
    }
    values.update(overrides)
    return TrainConfig.model_validate(values)


@pytest.fixture
def tiny_config() -> TrainConfig:
    return make_tiny_config()


def make_tiny_stream(n_domains: int = 2, ids: int = 3, seqs: int = 4, seed: int = 5) -> list[StepDataset]:
    rng = np.random.default_rng(seed)
    return generate_domain_stream(n_domains, ids, seqs, rng, length=6, height=16, width=12)


@pytest.fixture
def tiny_stream() -> list[StepDataset]:
    return make_tiny_stream()


def make_sequence(
    identity: int,
    *,
    index: int = 0,
    frames: np.ndarray | None = None,
    length: int = 6,
    height: int = 16,
    width: int = 12,
    seed: int = 0,
) -> SilhouetteSequence:
    """Random binary clip with a unique sample id."""
    if frames is None:
        rng = np.random.default_rng([seed, identity, index])
        frames = (rng.random((length, height, width)) < 0.3).astype(np.float32)
    return SilhouetteSequence(
        frames=frames,
        identity=identity,
        domain_id=0,
        sample_id=f"{identity:05d}/nm-{index:02d}/090",
    )


@pytest.fixture
def float64() -> Generator[None]:
    """Run a test with float64 as the default torch dtype."""
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)
