"""Gallery/probe retrieval metrics and backtesting."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import torch

from gaitadapt.core.backbone import stack_frames
from gaitadapt.core.model import GaitAdapterModel
from gaitadapt.data.sequence import SilhouetteSequence, StepDataset
from gaitadapt.errors.exceptions import DataError
from gaitadapt.schemas.common import ProtocolTag
from gaitadapt.schemas.report import ALL_CONDITIONS, EvalRow, RetrievalScore

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbeddingTable:
    """One embedding per sequence, with identity and condition labels."""

    embeddings: np.ndarray  # N x D, float64
    labels: np.ndarray  # N, int64
    conditions: tuple[str, ...] = ()
    sample_ids: tuple[str, ...] = ()

    def __len__(self) -> int:
        return int(self.embeddings.shape[0])

    def select(self, mask: np.ndarray) -> EmbeddingTable:
        keep = np.flatnonzero(mask)
        return EmbeddingTable(
            embeddings=self.embeddings[keep],
            labels=self.labels[keep],
            conditions=tuple(self.conditions[i] for i in keep) if self.conditions else (),
            sample_ids=tuple(self.sample_ids[i] for i in keep) if self.sample_ids else (),
        )

    @classmethod
    def concat(cls, tables: Sequence[EmbeddingTable]) -> EmbeddingTable:
        return cls(
            embeddings=np.concatenate([t.embeddings for t in tables]),
            labels=np.concatenate([t.labels for t in tables]),
            conditions=tuple(c for t in tables for c in t.conditions),
            sample_ids=tuple(s for t in tables for s in t.sample_ids),
        )


def extract_embeddings(
    model: GaitAdapterModel,
    sequences: Sequence[SilhouetteSequence],
    length: int,
    batch_size: int = 64,
) -> EmbeddingTable:
    """Embed sequences in inference mode, `batch_size` at a time."""
    param = next(model.parameters())
    was_training = model.training
    model.eval()
    chunks: list[np.ndarray] = []
    with torch.no_grad():
        for start in range(0, len(sequences), batch_size):
            batch = sequences[start : start + batch_size]
            frames = stack_frames(batch, length, dtype=param.dtype, device=param.device)
            chunks.append(model.embed(frames).cpu().numpy().astype(np.float64))
    model.train(was_training)
    width = model.settings.embedding_width
    return EmbeddingTable(
        embeddings=np.concatenate(chunks) if chunks else np.zeros((0, width)),
        labels=np.array([seq.identity for seq in sequences], dtype=np.int64),
        conditions=tuple(seq.condition.value for seq in sequences),
        sample_ids=tuple(seq.sample_id for seq in sequences),
    )


def extract_gallery_probe_embeddings(
    model: GaitAdapterModel,
    step: StepDataset,
    length: int,
    batch_size: int = 64,
) -> tuple[EmbeddingTable, EmbeddingTable]:
    if not step.gallery:
        raise DataError(f"{step.name} has an empty gallery")
    return (
        extract_embeddings(model, step.gallery, length, batch_size),
        extract_embeddings(model, step.probe, length, batch_size),
    )


def distance_matrix(probe: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """Euclidean distances, probes by rows."""
    diff = probe[:, None, :] - gallery[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _check_tables(probe: EmbeddingTable, gallery: EmbeddingTable) -> None:
    if len(gallery) == 0:
        raise DataError("cannot rank against an empty gallery")


def absent_probes(probe: EmbeddingTable, gallery: EmbeddingTable) -> np.ndarray:
    """Mask of probes whose identity has no gallery entry."""
    return ~np.isin(probe.labels, gallery.labels)


def rank1(probe: EmbeddingTable, gallery: EmbeddingTable) -> float:
    """Percentage of probes whose nearest gallery entry (lowest index on ties) shares their identity."""
    _check_tables(probe, gallery)
    if len(probe) == 0:
        return 0.0
    nearest = np.argmin(distance_matrix(probe.embeddings, gallery.embeddings), axis=1)
    hits = int(np.count_nonzero(gallery.labels[nearest] == probe.labels))
    return 100.0 * hits / len(probe)


def average_precision(distances: np.ndarray, relevant: np.ndarray) -> float:
    """AP of one probe; 0 when nothing in the gallery is relevant."""
    order = np.argsort(distances, kind="stable")
    hits = relevant[order]
    if not hits.any():
        return 0.0
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, len(ranks) + 1) / ranks
    return float(precision.mean())


def mean_average_precision(probe: EmbeddingTable, gallery: EmbeddingTable) -> float:
    _check_tables(probe, gallery)
    if len(probe) == 0:
        return 0.0
    distances = distance_matrix(probe.embeddings, gallery.embeddings)
    aps = [
        average_precision(distances[i], gallery.labels == probe.labels[i])
        for i in range(len(probe))
    ]
    return 100.0 * float(sum(aps)) / len(aps)


def score(probe: EmbeddingTable, gallery: EmbeddingTable) -> RetrievalScore:
    absent = int(absent_probes(probe, gallery).sum())
    if absent:
        logger.warning(f"{absent} probe(s) have no gallery entry of their identity")
    return RetrievalScore(
        rank1=rank1(probe, gallery),
        mean_ap=mean_average_precision(probe, gallery),
        probes=len(probe),
        absent=absent,
    )


def score_by_condition(probe: EmbeddingTable, gallery: EmbeddingTable) -> dict[str, RetrievalScore]:
    """Overall score plus one per probe condition, all against the full gallery."""
    scores = {ALL_CONDITIONS: score(probe, gallery)}
    for condition in sorted(set(probe.conditions)):
        mask = np.array([c == condition for c in probe.conditions])
        scores[condition] = score(probe.select(mask), gallery)
    return scores


def backtest(
    model: GaitAdapterModel,
    step: int,
    test_sets: Sequence[StepDataset],
    length: int,
    batch_size: int = 64,
) -> EvalRow:
    """
    Evaluate the current model on every given test set.

    The target score is union retrieval: probes of all trained test sets
    against their merged galleries.
    """
    if not test_sets:
        raise DataError(f"nothing to evaluate after step {step}")
    results: dict[str, dict[str, RetrievalScore]] = {}
    galleries: list[EmbeddingTable] = []
    probes: list[EmbeddingTable] = []
    for test_set in test_sets:
        gallery, probe = extract_gallery_probe_embeddings(model, test_set, length, batch_size)
        results[test_set.name] = score_by_condition(probe, gallery)
        if test_set.protocol is not ProtocolTag.UNSEEN:
            galleries.append(gallery)
            probes.append(probe)
        logger.info(
            f"Step {step} on {test_set.name}: rank-1 {results[test_set.name][ALL_CONDITIONS].rank1:.2f}"
        )

    if not galleries:
        # Only evaluation-only sets so far
        galleries = [extract_embeddings(model, t.gallery, length, batch_size) for t in test_sets]
        probes = [extract_embeddings(model, t.probe, length, batch_size) for t in test_sets]
    target = score(EmbeddingTable.concat(probes), EmbeddingTable.concat(galleries))
    return EvalRow(step=step, results=results, target=target)
