"""Continual training loop: one call per step of the stream."""

from __future__ import annotations

import logging
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from gaitadapt.core.backbone import id_loss, stack_frames
from gaitadapt.core.baselines import (
    MethodProfile,
    compose_objective,
    crl_from_logits,
    method_profile,
    restrict,
    spd_loss,
)
from gaitadapt.core.losses import (
    LossComponents,
    edsn_loss,
    logit_distillation_loss,
    negative_distance_distribution,
    triplet_loss,
    valid_anchor_mask,
)
from gaitadapt.core.model import GaitAdapterModel, ModelSnapshot, build_model, take_snapshot
from gaitadapt.data.sequence import SilhouetteSequence, StepDataset
from gaitadapt.errors.exceptions import DataError, ValidationError
from gaitadapt.schemas.common import MilestoneUnit
from gaitadapt.schemas.training import TrainConfig, TrainingLogRecord
from gaitadapt.services.sampler import effective_identities, group_by_identity, sample_batch
from gaitadapt.services.telemetry import DataAccessAudit, TrainingTelemetry

logger = logging.getLogger(__name__)

LogSink = Callable[[TrainingLogRecord], None]


@dataclass
class TrainState:
    """Live model plus everything the next step needs."""

    model: GaitAdapterModel
    step: int = 1  # index of the next step to run
    snapshot: ModelSnapshot | None = None
    class_index: dict[int, int] = field(default_factory=lambda: {})
    telemetry: TrainingTelemetry = field(default_factory=TrainingTelemetry)
    audit: DataAccessAudit = field(default_factory=DataAccessAudit)

    @property
    def completed_steps(self) -> int:
        return self.step - 1


def init_state(config: TrainConfig, device: torch.device | str = "cpu") -> TrainState:
    return TrainState(model=build_model(config, device=device))


def lr_schedule(step: int, iteration: int, config: TrainConfig) -> float:
    """
    Base rate times decay^(milestones passed).

    Step-indexed milestones count continual steps already finished, so the
    first step always runs at the base rate. Iteration-indexed milestones
    count global iterations from zero.
    """
    if config.milestone_unit is MilestoneUnit.ITERATION:
        position = (step - 1) * config.iterations_per_step + iteration
        passed = sum(1 for m in config.lr_milestones if m <= position)
    else:
        passed = sum(1 for m in config.lr_milestones if m < step)
    return config.learning_rate * config.lr_decay**passed


def snapshot(state: TrainState) -> ModelSnapshot:
    """Immutable copy of the live model, stamped with the last completed step."""
    return take_snapshot(state.model, state.completed_steps)


def compute_components(
    model: GaitAdapterModel,
    teacher: ModelSnapshot | None,
    frames: torch.Tensor,
    labels: torch.Tensor,
    config: TrainConfig,
    step: int,
    profile: MethodProfile | None = None,
) -> LossComponents:
    """Every loss term the method needs for one batch."""
    profile = profile or method_profile(config.method)
    out = model(frames)
    components = LossComponents(
        id=id_loss(out.logits, labels),
        triplet=triplet_loss(out.embeddings, labels, config.triplet_mining),
    )
    if not profile.is_retrospective:
        return components

    zero = out.embeddings.sum() * 0.0
    if step <= 1 or teacher is None:
        return restrict(
            replace(components, distill=zero, stability=zero, edsn=zero, spd=zero, crl=zero),
            profile,
        )

    old = teacher(frames)
    if profile.distill:
        components.distill = logit_distillation_loss(out.logits, old.logits)
    if profile.stability:
        components.stability = model.gpak.stability_loss()
    if profile.edsn:
        components.edsn = edsn_loss(
            negative_distance_distribution(out.embeddings, labels),
            negative_distance_distribution(old.embeddings, labels),
            config.edsn_reduction,
        )
    if profile.spd:
        components.spd = spd_loss(out.embeddings, old.embeddings)
    if profile.crl:
        components.crl = crl_from_logits(out.logits, old.logits, config.crl_margin)
    return components


def _assign_classes(state: TrainState, train: Sequence[SilhouetteSequence]) -> int:
    new = sorted({seq.identity for seq in train} - state.class_index.keys())
    base = len(state.class_index)
    for offset, identity in enumerate(new):
        state.class_index[identity] = base + offset
    return len(new)


def run_step(
    state: TrainState,
    step_data: StepDataset,
    config: TrainConfig,
    log_sink: LogSink | None = None,
    on_step_start: Callable[[int], None] | None = None,
    on_step_complete: Callable[[int], None] | None = None,
) -> TrainState:
    """
    Train one continual step on `step_data.train` only.

    Expands the classifier for new identities, minimises the method's
    objective for `iterations_per_step` P x K batches, and finishes with a
    fresh snapshot that becomes the teacher of the next step.
    """
    s = state.step
    if step_data.is_evaluation_only or not step_data.train:
        raise DataError(f"step {s} ({step_data.name}) has an empty training set")
    if s >= 2 and (state.snapshot is None or state.snapshot.step != s - 1):
        raise ValidationError(f"step {s} needs the snapshot of step {s - 1}")

    if on_step_start:
        on_step_start(s)

    profile = method_profile(config.method)
    model = state.model
    param = next(model.parameters())
    teacher = state.snapshot if s >= 2 else None

    p = effective_identities(len(group_by_identity(step_data.train)), config.identities_per_batch)
    if p < config.identities_per_batch:
        logger.warning(
            f"Step {s}: only {p} identities in {step_data.name}, sampling P={p} instead of"
            f" {config.identities_per_batch}"
        )

    new_classes = _assign_classes(state, step_data.train)
    generator = torch.Generator(device=param.device).manual_seed(config.seed * 1000 + s)
    model.head.expand(new_classes, generator=generator)

    if teacher is not None:
        if profile.stability:
            model.gpak.set_previous(teacher.model.gpak.repository)
        state.telemetry.record_teacher(s, teacher.step, teacher.digest)

    optimizer = torch.optim.Adam(
        model.parameters(), lr=lr_schedule(s, 0, config), betas=config.adam_betas
    )
    rng = np.random.default_rng([config.seed, s])
    torch.manual_seed(config.seed * 1000 + s)

    logger.info(
        f"Step {s} ({step_data.name}): {len(step_data.train)} sequences, "
        f"{len(step_data.train_identities)} identities, {model.class_count} classes, "
        f"{config.iterations_per_step} iterations"
    )
    started = time.time()
    model.train()
    for iteration in range(config.iterations_per_step):
        lr = lr_schedule(s, iteration, config)
        for group in optimizer.param_groups:
            group["lr"] = lr

        batch = sample_batch(step_data.train, p, config.samples_per_identity, rng)
        state.audit.record(s, (seq.sample_id for seq in batch))
        frames = stack_frames(batch, config.sequence_length, dtype=param.dtype, device=param.device)
        labels = torch.tensor(
            [state.class_index[seq.identity] for seq in batch], device=param.device
        )

        components = compute_components(model, teacher, frames, labels, config, s, profile)
        loss = compose_objective(config.method, s, components, config.loss_weights)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        state.telemetry.record_iteration(
            has_triplet=bool(valid_anchor_mask(labels).any()),
            has_negatives=bool((labels != labels[0]).any()),
        )
        if log_sink:
            log_sink(
                TrainingLogRecord(
                    step=s,
                    iteration=iteration,
                    learning_rate=lr,
                    identities=p,
                    total=float(loss),
                    teacher_step=teacher.step if teacher else None,
                    teacher_digest=teacher.digest if teacher else None,
                    **components.as_floats(),
                )
            )
        if (iteration + 1) % config.log_every == 0:
            logger.info(f"Step {s} iteration {iteration + 1}: loss {float(loss):.4f}, lr {lr:.2e}")
    model.eval()

    if teacher is not None and not teacher.verify():
        raise ValidationError(f"snapshot of step {teacher.step} changed during step {s}")

    state.telemetry.record_classes(s, model.class_count)
    logger.info(f"Step {s} finished in {time.time() - started:.1f}s")
    next_state = replace(state, step=s + 1)
    next_state.snapshot = snapshot(next_state)

    if on_step_complete:
        on_step_complete(s)
    return next_state


def run_stream(
    state: TrainState,
    steps: Sequence[StepDataset],
    config: TrainConfig,
    log_sink: LogSink | None = None,
    on_step_complete: Callable[[TrainState], None] | None = None,
) -> TrainState:
    """Run every training step of a stream after `state.completed_steps`, skipping evaluation-only entries."""
    training = [step for step in steps if not step.is_evaluation_only]
    for step_data in training[state.completed_steps :]:
        state = run_step(state, step_data, config, log_sink=log_sink)
        if on_step_complete:
            on_step_complete(state)
    return state
