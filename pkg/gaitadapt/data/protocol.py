"""Continual stream construction for the inner, cross and unseen protocols."""

from __future__ import annotations

import logging
from collections import defaultdict
from collections.abc import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from gaitadapt.data.sequence import GaitDataset, SilhouetteSequence, StepDataset
from gaitadapt.errors.exceptions import DataError, ValidationError
from gaitadapt.schemas.common import ProtocolTag

logger = logging.getLogger(__name__)


class StreamConfig(BaseModel):
    """How datasets are cut into continual steps."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    partitions: int = Field(default=10, ge=1)
    gallery_per_identity: int = Field(default=1, ge=1)
    seed: int = 0


def _by_identity(sequences: Sequence[SilhouetteSequence]) -> dict[int, list[SilhouetteSequence]]:
    groups: dict[int, list[SilhouetteSequence]] = defaultdict(list)
    for seq in sorted(sequences, key=lambda s: s.sample_id):
        groups[seq.identity].append(seq)
    return dict(groups)


def split_gallery_probe(
    sequences: Sequence[SilhouetteSequence], gallery_per_identity: int
) -> tuple[tuple[SilhouetteSequence, ...], tuple[SilhouetteSequence, ...]]:
    """First sequences of each subject (by sample id) enroll, the rest probe."""
    gallery: list[SilhouetteSequence] = []
    probe: list[SilhouetteSequence] = []
    for seqs in _by_identity(sequences).values():
        gallery.extend(seqs[:gallery_per_identity])
        probe.extend(seqs[gallery_per_identity:])
    return tuple(gallery), tuple(probe)


def _check_identity_spaces(datasets: Sequence[GaitDataset]) -> None:
    seen: dict[int, str] = {}
    for dataset in datasets:
        for identity in dataset.identities:
            if identity in seen and seen[identity] != dataset.name:
                raise DataError(
                    f"Identity {identity} appears in both {seen[identity]} and {dataset.name}"
                )
            seen[identity] = dataset.name


def _partition_identities(identities: set[int], parts: int, rng: np.random.Generator) -> list[set[int]]:
    ordered = np.array(sorted(identities))
    rng.shuffle(ordered)
    return [set(int(i) for i in chunk) for chunk in np.array_split(ordered, parts)]


def _inner_steps(dataset: GaitDataset, config: StreamConfig) -> list[StepDataset]:
    rng = np.random.default_rng([config.seed, dataset.domain_id])
    train_groups = _by_identity(dataset.train)
    test_groups = _by_identity(dataset.test)
    if len(train_groups) < config.partitions or len(test_groups) < config.partitions:
        raise DataError(
            f"{dataset.name}: cannot cut {len(train_groups)} train / {len(test_groups)} test"
            f" identities into {config.partitions} partitions"
        )
    train_parts = _partition_identities(set(train_groups), config.partitions, rng)
    test_parts = _partition_identities(set(test_groups), config.partitions, rng)

    steps: list[StepDataset] = []
    for k, (train_ids, test_ids) in enumerate(zip(train_parts, test_parts, strict=True)):
        train = tuple(seq for i in sorted(train_ids) for seq in train_groups[i])
        test = [seq for i in sorted(test_ids) for seq in test_groups[i]]
        gallery, probe = split_gallery_probe(test, config.gallery_per_identity)
        steps.append(
            StepDataset(
                name=f"{dataset.name}/{k + 1}",
                train=train,
                gallery=gallery,
                probe=probe,
                domain_id=dataset.domain_id,
                protocol=ProtocolTag.INNER,
            )
        )
    return steps


def _cross_step(dataset: GaitDataset, config: StreamConfig, dependent: bool) -> StepDataset:
    gallery, probe = split_gallery_probe(dataset.test, config.gallery_per_identity)
    train = dataset.train + gallery if dependent else dataset.train
    return StepDataset(
        name=dataset.name,
        train=train,
        gallery=gallery,
        probe=probe,
        domain_id=dataset.domain_id,
        protocol=ProtocolTag.CROSS_DEPENDENT if dependent else ProtocolTag.CROSS_INDEPENDENT,
    )


def _unseen_step(dataset: GaitDataset, config: StreamConfig) -> StepDataset:
    gallery, probe = split_gallery_probe(dataset.test or dataset.train, config.gallery_per_identity)
    return StepDataset(
        name=dataset.name,
        train=(),
        gallery=gallery,
        probe=probe,
        domain_id=dataset.domain_id,
        protocol=ProtocolTag.UNSEEN,
    )


def build_stream(
    protocol: ProtocolTag,
    datasets: Sequence[GaitDataset],
    config: StreamConfig | None = None,
    unseen: Sequence[GaitDataset] = (),
) -> list[StepDataset]:
    """
    Cut datasets into an ordered list of steps.

    inner: one dataset, `partitions` identity partitions, one step each.
    cross-indep / cross-dep: one step per dataset in the given order; the
    dependent variant merges gallery sequences into training.
    unseen: evaluation-only entries (empty train). Datasets passed through
    `unseen` are appended as evaluation-only entries after the training steps.
    """
    config = config or StreamConfig()
    if not datasets and not unseen:
        raise ValidationError("build_stream needs at least one dataset")
    _check_identity_spaces([*datasets, *unseen])

    steps: list[StepDataset]
    if protocol == ProtocolTag.INNER:
        if len(datasets) != 1:
            raise ValidationError("inner-domain protocol takes exactly one dataset")
        steps = _inner_steps(datasets[0], config)
    elif protocol in (ProtocolTag.CROSS_INDEPENDENT, ProtocolTag.CROSS_DEPENDENT):
        dependent = protocol == ProtocolTag.CROSS_DEPENDENT
        steps = [_cross_step(d, config, dependent) for d in datasets]
    else:
        steps = [_unseen_step(d, config) for d in datasets]

    steps.extend(_unseen_step(d, config) for d in unseen)
    logger.info(f"Built {protocol.value} stream with {len(steps)} step(s)")
    return steps
