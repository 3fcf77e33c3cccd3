"""Tests for the continual training loop."""

from __future__ import annotations

import pytest
import torch

from gaitadapt.core.model import state_digest
from gaitadapt.data.sequence import StepDataset
from gaitadapt.errors.exceptions import DataError, NumericalFailureError, ValidationError
from gaitadapt.schemas.common import MethodTag, MilestoneUnit, ProtocolTag
from gaitadapt.schemas.training import TrainingLogRecord
from gaitadapt.services.trainer import init_state, lr_schedule, run_step, run_stream, snapshot
from tests.conftest import make_sequence, make_tiny_config, make_tiny_stream


def _train(config, stream, steps: int | None = None):
    records: list[TrainingLogRecord] = []
    state = init_state(config)
    for step_data in stream[:steps]:
        state = run_step(state, step_data, config, log_sink=records.append)
    return state, records


class TestLrSchedule:
    """Test the multi-step learning rate."""

    def test_first_step_base_rate(self):
        """Test step 1 runs at 3.5e-4 under the default milestones."""
        assert lr_schedule(1, 0, make_tiny_config(lr_milestones=(1, 2, 3))) == pytest.approx(3.5e-4)

    def test_three_decays(self):
        """Test step 4 with milestones {1,2,3} and decay 0.1 gives 3.5e-7."""
        assert lr_schedule(4, 0, make_tiny_config(lr_milestones=(1, 2, 3))) == pytest.approx(3.5e-7)

    def test_no_milestones_constant(self):
        """Test an empty milestone set keeps the base rate."""
        config = make_tiny_config(lr_milestones=())
        assert {lr_schedule(s, i, config) for s in range(1, 6) for i in range(3)} == {3.5e-4}

    def test_iteration_milestones(self):
        """Test iteration-indexed milestones count global iterations."""
        config = make_tiny_config(
            lr_milestones=(3,), milestone_unit=MilestoneUnit.ITERATION, iterations_per_step=2
        )
        assert lr_schedule(1, 1, config) == pytest.approx(3.5e-4)
        assert lr_schedule(2, 1, config) == pytest.approx(3.5e-5)


class TestRunStep:
    """Test one continual step."""

    def test_zero_iterations_keeps_parameters(self, tiny_config, tiny_stream):
        """Test zero iterations changes no trained weight but refreshes the snapshot."""
        config = make_tiny_config(iterations_per_step=0)
        state = init_state(config)
        before = state_digest(state.model.encoder), state_digest(state.model.gpak)
        state = run_step(state, tiny_stream[0], config)
        assert (state_digest(state.model.encoder), state_digest(state.model.gpak)) == before
        assert state.snapshot is not None
        assert state.snapshot.step == 1
        assert state.snapshot.digest == state_digest(state.model)

    def test_step_one_retrospective_terms_zero(self, tiny_config, tiny_stream):
        """Test distill, stability and EDSN log as 0 at step 1."""
        _, records = _train(tiny_config, tiny_stream, steps=1)
        assert len(records) == tiny_config.iterations_per_step
        for record in records:
            assert (record.distill, record.stability, record.edsn) == (0.0, 0.0, 0.0)
            assert record.spd is None and record.crl is None
            assert record.teacher_step is None

    def test_same_architecture_methods_differ_only_in_retrospective_columns(self, tiny_stream):
        """Test Base and Base+EDSN share identity and triplet values at step 1."""
        _, base = _train(make_tiny_config(method=MethodTag.BASE), tiny_stream, steps=1)
        _, edsn = _train(make_tiny_config(method=MethodTag.BASE_EDSN), tiny_stream, steps=1)
        for a, b in zip(base, edsn, strict=True):
            assert (a.id, a.triplet, a.total) == (b.id, b.triplet, b.total)
            assert a.distill is None and b.distill == 0.0

    def test_deterministic(self, tiny_config, tiny_stream):
        """Test two 2-step runs with equal seeds end with equal parameter hashes."""
        first, _ = _train(tiny_config, tiny_stream)
        second, _ = _train(tiny_config, make_tiny_stream())
        assert state_digest(first.model) == state_digest(second.model)

    def test_class_growth(self, tiny_config, tiny_stream):
        """Test the head grows by the new identities of each step."""
        state, _ = _train(tiny_config, tiny_stream)
        assert state.telemetry.stats().class_counts == {1: 3, 2: 6}
        assert state.class_index == {i: i for i in range(6)}

    def test_teacher_is_previous_snapshot(self, tiny_config, tiny_stream):
        """Test step 2 consumes exactly the snapshot taken at the end of step 1."""
        state = run_step(init_state(tiny_config), tiny_stream[0], tiny_config)
        step_one = state.snapshot
        records: list[TrainingLogRecord] = []
        state = run_step(state, tiny_stream[1], tiny_config, log_sink=records.append)
        stats = state.telemetry.stats()
        assert stats.teacher_steps == {2: 1}
        assert stats.teacher_digests[2] == step_one.digest
        assert step_one.verify()
        assert all(r.teacher_step == 1 and r.teacher_digest == step_one.digest for r in records)
        assert all(r.edsn is not None and r.stability is not None for r in records)

    def test_no_replay_over_three_steps(self, tiny_config):
        """Test step s never reads a training sample of an earlier step."""
        stream = make_tiny_stream(n_domains=3)
        state, _ = _train(tiny_config, stream)
        train_ids = {s + 1: {seq.sample_id for seq in step.train} for s, step in enumerate(stream)}
        assert state.audit.steps == [1, 2, 3]
        assert state.audit.replay_violations(train_ids) == {}
        for s in (1, 2, 3):
            assert state.audit.accessed(s) <= train_ids[s]

    def test_empty_train_rejected(self, tiny_config):
        """Test an evaluation-only step cannot be trained."""
        step = StepDataset(
            "u", train=(), gallery=(make_sequence(0),), probe=(make_sequence(0, index=1),),
            domain_id=0, protocol=ProtocolTag.UNSEEN,
        )
        with pytest.raises(DataError):
            run_step(init_state(tiny_config), step, tiny_config)

    def test_missing_snapshot_rejected(self, tiny_config, tiny_stream):
        """Test step 2 without the step-1 snapshot is rejected."""
        state = init_state(tiny_config)
        state.step = 2
        with pytest.raises(ValidationError):
            run_step(state, tiny_stream[1], tiny_config)

    def test_non_finite_names_component(self, tiny_config, tiny_stream):
        """Test NaN weights abort with the failing component named."""
        state = init_state(tiny_config)
        with torch.no_grad():
            state.model.encoder.final.weight.fill_(float("nan"))
        with pytest.raises(NumericalFailureError) as exc_info:
            run_step(state, tiny_stream[0], tiny_config)
        assert exc_info.value.component == "extractor"

    def test_snapshot_helper(self, tiny_config):
        """Test snapshot() stamps the last completed step."""
        state = init_state(tiny_config)
        state.step = 3
        assert snapshot(state).step == 2


class TestRunStream:
    """Test multi-step driving."""

    def test_skips_evaluation_only(self, tiny_config, tiny_stream):
        """Test unseen entries are not trained."""
        unseen = StepDataset(
            "u", train=(), gallery=(make_sequence(50),), probe=(make_sequence(50, index=1),),
            domain_id=9, protocol=ProtocolTag.UNSEEN,
        )
        completed: list[int] = []
        state = run_stream(
            init_state(tiny_config), [*tiny_stream, unseen], tiny_config,
            on_step_complete=lambda s: completed.append(s.completed_steps),
        )
        assert state.completed_steps == 2
        assert completed == [1, 2]

    def test_resume_matches_uninterrupted(self, tiny_config, tiny_stream):
        """Test continuing from a step-1 state equals running both steps at once."""
        full = run_stream(init_state(tiny_config), tiny_stream, tiny_config)
        partial = run_stream(init_state(tiny_config), tiny_stream[:1], tiny_config)
        resumed = run_stream(partial, tiny_stream, tiny_config)
        assert state_digest(resumed.model) == state_digest(full.model)
