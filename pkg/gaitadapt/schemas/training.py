"""Training configuration and training log schemas."""

from __future__ import annotations

from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from gaitadapt.schemas.common import (
    GraphType,
    MethodTag,
    MilestoneUnit,
    Reduction,
    TripletMining,
)

SUPPORTED_PART_COUNTS = (1, 2, 4, 8, 16)


class LossWeights(BaseModel):
    """Per-component weights of the total objective (all 1.0 by default)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    id: float = Field(default=1.0, ge=0.0)
    triplet: float = Field(default=1.0, ge=0.0)
    distill: float = Field(default=1.0, ge=0.0)
    stability: float = Field(default=1.0, ge=0.0)
    edsn: float = Field(default=1.0, ge=0.0)
    spd: float = Field(default=1.0, ge=0.0)
    crl: float = Field(default=1.0, ge=0.0)


class ModelSettings(BaseModel):
    """Shape contract of the extractor, GPAK module and classifier."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    frame_height: int = Field(default=64, ge=8)
    channels: int = Field(default=64, ge=1)
    feature_height: int = Field(default=16, ge=1)
    temporal_window: int = Field(default=3, ge=1)
    parts: int = 16
    repository_size: int = Field(default=64, ge=1)
    graph_type: GraphType = GraphType.BIPARTITE
    use_gpak: bool = True

    @property
    def embedding_width(self) -> int:
        return self.parts * self.channels

    @model_validator(mode="after")
    def _check_parts(self) -> ModelSettings:
        if self.feature_height % self.parts != 0:
            raise ValueError(
                f"parts={self.parts} does not divide feature_height={self.feature_height}"
            )
        return self


class TrainConfig(BaseModel):
    """
    Continual training configuration.

    Defaults follow the reference training setup: 16 identities x 8 sequences per
    batch, 30-frame 64x44 clips, Adam at 3.5e-4 decayed by 0.1 over the first three
    continual steps, 16 parts and a 64-vertex repository.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    method: MethodTag = MethodTag.GAITADAPTER
    seed: int = 0
    stream_dir: Path | None = None

    # Sampling
    identities_per_batch: int = Field(default=16, ge=2)
    samples_per_identity: int = Field(default=8, ge=2)
    sequence_length: int = Field(default=30, ge=1)
    frame_height: int = Field(default=64, ge=8)
    frame_width: int = Field(default=44, ge=8)

    # Model
    channels: int = Field(default=64, ge=1)
    feature_height: int = Field(default=16, ge=1)
    temporal_window: int = Field(default=3, ge=1)
    parts: int = 16
    repository_size: int = Field(default=64, ge=1)
    graph_type: GraphType = GraphType.BIPARTITE

    # Optimization
    learning_rate: float = Field(default=3.5e-4, gt=0.0)
    lr_milestones: tuple[int, ...] = (1, 2, 3)
    lr_decay: float = Field(default=0.1, gt=0.0)
    milestone_unit: MilestoneUnit = MilestoneUnit.STEP
    adam_betas: tuple[float, float] = (0.9, 0.999)
    iterations_per_step: int = Field(default=500, ge=0)

    # Objective
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    triplet_mining: TripletMining = TripletMining.BATCH_HARD
    edsn_reduction: Reduction = Reduction.SUM
    crl_margin: float = Field(default=0.1, ge=0.0)

    dtype: Literal["float32", "float64"] = "float32"
    log_every: int = Field(default=50, ge=1)

    @model_validator(mode="after")
    def _check_shapes(self) -> TrainConfig:
        if self.parts not in SUPPORTED_PART_COUNTS:
            raise ValueError(f"parts must be one of {SUPPORTED_PART_COUNTS}, got {self.parts}")
        if self.feature_height % self.parts != 0:
            raise ValueError(
                f"parts={self.parts} does not divide feature_height={self.feature_height}"
            )
        if any(m < 0 for m in self.lr_milestones):
            raise ValueError("lr_milestones must be non-negative")
        if not all(0.0 <= b < 1.0 for b in self.adam_betas):
            raise ValueError("adam_betas must lie in [0, 1)")
        return self

    @property
    def batch_size(self) -> int:
        return self.identities_per_batch * self.samples_per_identity


class TrainingLogRecord(BaseModel):
    """One line of the training log (JSON Lines)."""

    step: int
    iteration: int
    learning_rate: float
    identities: int
    id: float
    triplet: float
    distill: float | None = None
    stability: float | None = None
    edsn: float | None = None
    spd: float | None = None
    crl: float | None = None
    total: float
    teacher_step: int | None = None
    teacher_digest: str | None = None
