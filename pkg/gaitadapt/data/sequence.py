"""Silhouette sequences and the step datasets of a continual stream."""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from gaitadapt.errors.exceptions import DataError, ValidationError
from gaitadapt.schemas.common import Condition, ProtocolTag

MIN_FRAME_SIZE = 8


def make_sample_id(identity: int, condition: Condition, index: int, view: int) -> str:
    """Stable sample identifier, identical to the on-disk relative sequence path."""
    return f"{identity:05d}/{condition.value.lower()}-{index:02d}/{view:03d}"


@dataclass(frozen=True, eq=False)
class SilhouetteSequence:
    """One labeled gait clip of T binary-ish frames."""

    frames: np.ndarray  # (T, H, W), float32 in [0, 1]
    identity: int
    domain_id: int
    condition: Condition = Condition.NM
    view: int = 90
    sample_id: str = ""

    def __post_init__(self) -> None:
        frames = self.frames
        if frames.ndim != 3:
            raise ValidationError(f"frames must be T x H x W, got shape {frames.shape}")
        t, h, w = frames.shape
        if t < 1 or h < MIN_FRAME_SIZE or w < MIN_FRAME_SIZE:
            raise ValidationError(f"sequence too small: T={t}, H={h}, W={w}")
        if not np.all(np.isfinite(frames)):
            raise ValidationError("frames contain non-finite values")
        if frames.min() < 0.0 or frames.max() > 1.0:
            raise ValidationError("frame values must lie within [0, 1]")
        if self.identity < 0:
            raise ValidationError(f"identity must be non-negative, got {self.identity}")
        if not self.sample_id:
            object.__setattr__(
                self, "sample_id", make_sample_id(self.identity, self.condition, 0, self.view)
            )

    @property
    def length(self) -> int:
        return int(self.frames.shape[0])

    @property
    def resolution(self) -> tuple[int, int]:
        return int(self.frames.shape[1]), int(self.frames.shape[2])


def identities_of(sequences: Iterable[SilhouetteSequence]) -> set[int]:
    return {seq.identity for seq in sequences}


def sample_ids_of(sequences: Iterable[SilhouetteSequence]) -> set[str]:
    return {seq.sample_id for seq in sequences}


@dataclass(frozen=True)
class GaitDataset:
    """A domain's sequences with its original train/test identity split."""

    name: str
    domain_id: int
    train: tuple[SilhouetteSequence, ...]
    test: tuple[SilhouetteSequence, ...]

    @property
    def identities(self) -> set[int]:
        return identities_of(self.train) | identities_of(self.test)


@dataclass(frozen=True)
class StepDataset:
    """
    One unit of the continual stream.

    Split hygiene is asserted at construction: probe sequences never appear in
    train, and for subject-independent protocols the gallery is disjoint from
    train as well. Sequence identity is the sample_id (identity + sequence key).
    """

    name: str
    train: tuple[SilhouetteSequence, ...]
    gallery: tuple[SilhouetteSequence, ...]
    probe: tuple[SilhouetteSequence, ...]
    domain_id: int
    protocol: ProtocolTag = ProtocolTag.CROSS_INDEPENDENT
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        train_ids = sample_ids_of(self.train)
        if len(train_ids) != len(self.train):
            raise DataError(f"{self.name}: duplicate sample ids in train split")
        if train_ids & sample_ids_of(self.probe):
            raise DataError(f"{self.name}: probe overlaps train")
        if self.protocol != ProtocolTag.CROSS_DEPENDENT and train_ids & sample_ids_of(self.gallery):
            raise DataError(f"{self.name}: gallery overlaps train under {self.protocol.value}")
        if self.protocol == ProtocolTag.UNSEEN and self.train:
            raise DataError(f"{self.name}: unseen-domain entries carry no training data")

    @property
    def is_evaluation_only(self) -> bool:
        return len(self.train) == 0

    @property
    def train_identities(self) -> set[int]:
        return identities_of(self.train)

    @property
    def test_sequences(self) -> tuple[SilhouetteSequence, ...]:
        return self.gallery + self.probe


def check_resolution(sequences: Sequence[SilhouetteSequence]) -> tuple[int, int]:
    """Return the shared H x W of a batch or raise ValidationError."""
    if not sequences:
        raise ValidationError("empty batch")
    resolutions = {seq.resolution for seq in sequences}
    if len(resolutions) != 1:
        raise ValidationError(f"mismatched frame resolutions in batch: {sorted(resolutions)}")
    return resolutions.pop()
