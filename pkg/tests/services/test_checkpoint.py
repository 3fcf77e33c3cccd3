"""Tests for step checkpoint archives."""

from __future__ import annotations

import pytest

from gaitadapt.core.model import state_digest
from gaitadapt.errors.exceptions import CheckpointError
from gaitadapt.services.checkpoint import (
    checkpoint_name,
    load_checkpoint,
    read_checkpoint_manifest,
    save_checkpoint,
)
from gaitadapt.services.trainer import init_state, run_step
from tests.conftest import make_tiny_config


class TestCheckpoint:
    """Test save and load of trained state."""

    def test_name(self):
        """Test archives are named by step index."""
        assert checkpoint_name(3) == "step_03.pt"

    def test_round_trip_restores_state(self, tmp_path, tiny_config, tiny_stream):
        """Test a loaded checkpoint carries weights, classes, telemetry and a fresh snapshot."""
        state = run_step(init_state(tiny_config), tiny_stream[0], tiny_config)
        path = tmp_path / checkpoint_name(1)
        manifest = save_checkpoint(path, state, tiny_config)
        assert manifest.step == 1
        assert manifest.class_count == 3
        assert read_checkpoint_manifest(path) == manifest

        loaded = load_checkpoint(path, tiny_config, step=1)
        assert state_digest(loaded.model) == state_digest(state.model)
        assert loaded.step == 2
        assert loaded.class_index == state.class_index
        assert loaded.snapshot is not None and loaded.snapshot.step == 1
        assert loaded.telemetry.stats() == state.telemetry.stats()

    def test_resumed_training_matches(self, tmp_path, tiny_config, tiny_stream):
        """Test training step 2 from a checkpoint equals training straight through."""
        state = run_step(init_state(tiny_config), tiny_stream[0], tiny_config)
        path = tmp_path / checkpoint_name(1)
        save_checkpoint(path, state, tiny_config)
        straight = run_step(state, tiny_stream[1], tiny_config)
        resumed = run_step(load_checkpoint(path, tiny_config, step=1), tiny_stream[1], tiny_config)
        assert state_digest(resumed.model) == state_digest(straight.model)

    def test_missing_names_step(self, tmp_path, tiny_config):
        """Test a missing archive raises with the step attached."""
        with pytest.raises(CheckpointError) as exc_info:
            load_checkpoint(tmp_path / checkpoint_name(4), tiny_config, step=4)
        assert exc_info.value.step == 4
        assert exc_info.value.exit_code == 3

    def test_corrupt_archive(self, tmp_path, tiny_config):
        """Test garbage bytes are reported as unreadable."""
        path = tmp_path / checkpoint_name(1)
        path.write_bytes(b"garbage")
        with pytest.raises(CheckpointError, match="unreadable"):
            load_checkpoint(path, tiny_config, step=1)

    def test_wrong_step(self, tmp_path, tiny_config, tiny_stream):
        """Test an archive holding a different step is rejected."""
        state = run_step(init_state(tiny_config), tiny_stream[0], tiny_config)
        path = tmp_path / checkpoint_name(2)
        save_checkpoint(path, state, tiny_config)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, tiny_config, step=2)

    def test_shape_mismatch(self, tmp_path, tiny_config, tiny_stream):
        """Test an archive from a different architecture is rejected."""
        state = run_step(init_state(tiny_config), tiny_stream[0], tiny_config)
        path = tmp_path / checkpoint_name(1)
        save_checkpoint(path, state, tiny_config)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, make_tiny_config(channels=4), step=1)
