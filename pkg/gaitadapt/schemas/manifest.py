"""Stream and experiment manifest schemas."""

from __future__ import annotations

from pydantic import BaseModel, Field

from gaitadapt.schemas.common import MethodTag, ProtocolTag


class StepManifest(BaseModel):
    """Split membership of one stream step, by sample id."""

    name: str
    domain_id: int
    protocol: ProtocolTag
    train: list[str]
    gallery: list[str]
    probe: list[str]
    metadata: dict[str, str] = Field(default_factory=dict)


class StreamManifest(BaseModel):
    """Everything needed to rebuild a stream from its directory layout."""

    seed: int | None = None
    n_domains: int
    ids_per_domain: int | None = None
    seqs_per_id: int | None = None
    length: int
    height: int
    width: int
    steps: list[StepManifest]


class ExperimentManifest(BaseModel):
    """Reconstructs a run: config, seed, code version, stream and outputs."""

    code_version: str
    method: MethodTag
    seed: int
    config: dict[str, object]
    stream_dir: str
    stream_digest: str
    completed_steps: int = 0
    step_names: list[str] = Field(default_factory=list)
    checkpoints: dict[int, str] = Field(default_factory=dict)
    train_log: str | None = None
    reports: dict[str, str] = Field(default_factory=dict)
    timings: dict[str, float] = Field(default_factory=dict)
    telemetry: dict[str, object] = Field(default_factory=dict)


class ComparisonRow(BaseModel):
    """One run's final-step summary in a comparison table."""

    run: str
    method: MethodTag
    source: float
    target: float
    average: float
    delta_source: float
    delta_target: float
    delta_average: float


class ComparisonManifest(BaseModel):
    """Which runs a comparison covers and the files it wrote."""

    code_version: str
    seed: int
    stream_digest: str
    runs: dict[str, str]  # run name -> run directory
    files: dict[str, str] = Field(default_factory=dict)


class CheckpointManifest(BaseModel):
    """Header stored next to the parameter arrays of a step checkpoint."""

    step: int
    method: MethodTag
    embedding_width: int
    parts: int
    channels: int
    repository_size: int
    class_count: int
    class_index: dict[int, int]
    digest: str
