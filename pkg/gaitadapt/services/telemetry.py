"""Training telemetry and the per-step data-access audit."""

from __future__ import annotations

import threading
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field
from typing import Any


@dataclass
class TelemetryStats:
    """Counters accumulated over a run."""

    iterations: int = 0
    no_triplet_batches: int = 0
    no_negative_batches: int = 0
    teacher_steps: dict[int, int] = field(default_factory=lambda: {})
    teacher_digests: dict[int, str] = field(default_factory=lambda: {})
    class_counts: dict[int, int] = field(default_factory=lambda: {})


class TrainingTelemetry:
    """
    Thread-safe accumulator fed by the training loop.

    Records degenerate batches and which snapshot served as the teacher of
    each step.
    """

    def __init__(self) -> None:
        self._stats = TelemetryStats()
        self._lock = threading.Lock()

    def record_iteration(self, *, has_triplet: bool, has_negatives: bool) -> None:
        with self._lock:
            self._stats.iterations += 1
            if not has_triplet:
                self._stats.no_triplet_batches += 1
            if not has_negatives:
                self._stats.no_negative_batches += 1

    def record_teacher(self, step: int, teacher_step: int, digest: str) -> None:
        with self._lock:
            self._stats.teacher_steps[step] = teacher_step
            self._stats.teacher_digests[step] = digest

    def record_classes(self, step: int, class_count: int) -> None:
        with self._lock:
            self._stats.class_counts[step] = class_count

    def stats(self) -> TelemetryStats:
        with self._lock:
            return TelemetryStats(
                iterations=self._stats.iterations,
                no_triplet_batches=self._stats.no_triplet_batches,
                no_negative_batches=self._stats.no_negative_batches,
                teacher_steps=dict(self._stats.teacher_steps),
                teacher_digests=dict(self._stats.teacher_digests),
                class_counts=dict(self._stats.class_counts),
            )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self.stats())

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TrainingTelemetry:
        telemetry = cls()
        # JSON turns int keys into strings
        telemetry._stats = TelemetryStats(
            iterations=int(data.get("iterations", 0)),
            no_triplet_batches=int(data.get("no_triplet_batches", 0)),
            no_negative_batches=int(data.get("no_negative_batches", 0)),
            teacher_steps={int(k): int(v) for k, v in data.get("teacher_steps", {}).items()},
            teacher_digests={int(k): str(v) for k, v in data.get("teacher_digests", {}).items()},
            class_counts={int(k): int(v) for k, v in data.get("class_counts", {}).items()},
        )
        return telemetry


class DataAccessAudit:
    """Every sample identifier the trainer touched, keyed by step."""

    def __init__(self) -> None:
        self._accessed: dict[int, set[str]] = {}
        self._lock = threading.Lock()

    def record(self, step: int, sample_ids: Iterable[str]) -> None:
        with self._lock:
            self._accessed.setdefault(step, set()).update(sample_ids)

    def accessed(self, step: int) -> set[str]:
        with self._lock:
            return set(self._accessed.get(step, set()))

    @property
    def steps(self) -> list[int]:
        with self._lock:
            return sorted(self._accessed)

    def replay_violations(self, train_ids: Mapping[int, set[str]]) -> dict[int, set[str]]:
        """
        Samples read at step s that belong to the training set of an earlier step.

        `train_ids` maps each step to its training sample identifiers.
        """
        violations: dict[int, set[str]] = {}
        for step in self.steps:
            earlier: set[str] = set()
            for prior, ids in train_ids.items():
                if prior < step:
                    earlier |= ids
            overlap = self.accessed(step) & earlier
            if overlap:
                violations[step] = overlap
        return violations
