"""Metric and retrospective losses, and the composed training objective."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F

from gaitadapt.errors.exceptions import NumericalFailureError, ValidationError
from gaitadapt.schemas.common import Reduction, TripletMining
from gaitadapt.schemas.training import LossWeights

logger = logging.getLogger(__name__)

KL_FLOOR = 1e-12

# Terms that need the previous step's model
RETROSPECTIVE = ("distill", "stability", "edsn", "spd", "crl")


def pairwise_distances(embeddings: torch.Tensor) -> torch.Tensor:
    """Euclidean distances with a finite gradient at zero."""
    sq = (embeddings.unsqueeze(1) - embeddings.unsqueeze(0)).pow(2).sum(dim=-1)
    positive = sq > 0
    return torch.where(positive, sq.clamp(min=1e-30).sqrt(), torch.zeros_like(sq))


@dataclass(frozen=True)
class NegativeDistribution:
    """Row-wise softmax over negative pairs; masked entries are zero."""

    probs: torch.Tensor  # S x S
    mask: torch.Tensor  # S x S, True where labels differ

    @property
    def valid_rows(self) -> torch.Tensor:
        return self.mask.any(dim=1)

    @property
    def is_empty(self) -> bool:
        return not bool(self.valid_rows.any())


def negative_distance_distribution(
    embeddings: torch.Tensor, labels: torch.Tensor
) -> NegativeDistribution:
    """
    Distribution of -0.5 * squared distance over each sample's negatives.

    Positive pairs and the diagonal are masked out. A row with no negative
    is all zeros.
    """
    if embeddings.shape[0] != labels.shape[0]:
        raise ValidationError("embeddings and labels disagree on batch size")
    mask = labels.unsqueeze(0) != labels.unsqueeze(1)
    sq = (embeddings.unsqueeze(1) - embeddings.unsqueeze(0)).pow(2).sum(dim=-1)
    logits = (-0.5 * sq).masked_fill(~mask, float("-inf"))
    valid = mask.any(dim=1, keepdim=True)
    logits = torch.where(valid, logits, torch.zeros_like(logits))
    probs = torch.softmax(logits, dim=1) * valid
    return NegativeDistribution(probs=probs, mask=mask)


def edsn_loss(
    new: NegativeDistribution,
    old: NegativeDistribution,
    reduction: Reduction = Reduction.SUM,
) -> torch.Tensor:
    """KL(old || new) summed over every unmasked entry (optionally averaged per row)."""
    if new.mask.shape != old.mask.shape or not torch.equal(new.mask, old.mask):
        raise ValidationError("negative-pair masks differ between current and previous model")
    if new.is_empty:
        logger.warning("No negative pairs in batch, distance distillation is zero")
        return new.probs.sum() * 0.0

    p_old = old.probs.detach().clamp(min=KL_FLOOR)
    p_new = new.probs.clamp(min=KL_FLOOR)
    terms = (p_old * (p_old.log() - p_new.log())) * new.mask
    total = terms.sum()
    if Reduction(reduction) is Reduction.MEAN:
        total = total / new.valid_rows.sum()
    return total


def logit_distillation_loss(new_logits: torch.Tensor, old_logits: torch.Tensor) -> torch.Tensor:
    """Cross-entropy of the new softmax (restricted to old classes) against the old softmax."""
    if new_logits.shape[0] != old_logits.shape[0]:
        raise ValidationError("logit batches differ in size")
    old_classes = old_logits.shape[1]
    if old_classes > new_logits.shape[1]:
        raise ValidationError(
            f"previous head has {old_classes} classes, more than the current {new_logits.shape[1]}"
        )
    if old_classes == 0:
        return new_logits.sum() * 0.0
    p_old = torch.softmax(old_logits.detach(), dim=1)
    log_q = torch.log_softmax(new_logits[:, :old_classes], dim=1)
    return -(p_old * log_q).sum(dim=1).mean()


def valid_anchor_mask(labels: torch.Tensor) -> torch.Tensor:
    """Anchors that have at least one positive and one negative in the batch."""
    same = labels.unsqueeze(0) == labels.unsqueeze(1)
    eye = torch.eye(labels.shape[0], dtype=torch.bool, device=labels.device)
    return (same & ~eye).any(dim=1) & (~same).any(dim=1)


def triplet_loss(
    embeddings: torch.Tensor,
    labels: torch.Tensor,
    mining: TripletMining = TripletMining.BATCH_HARD,
) -> torch.Tensor:
    """Soft-margin triplet loss, ln(1 + exp(d(a,p) - d(a,n))), on Euclidean distances."""
    if embeddings.shape[0] != labels.shape[0]:
        raise ValidationError("embeddings and labels disagree on batch size")
    valid = valid_anchor_mask(labels)
    if not bool(valid.any()):
        logger.warning("Batch holds no valid triplet, triplet loss is zero")
        return embeddings.sum() * 0.0

    dist = pairwise_distances(embeddings)
    same = labels.unsqueeze(0) == labels.unsqueeze(1)
    eye = torch.eye(labels.shape[0], dtype=torch.bool, device=labels.device)
    pos = same & ~eye
    neg = ~same

    if TripletMining(mining) is TripletMining.ALL:
        mask = pos.unsqueeze(2) & neg.unsqueeze(1)
        gaps = dist.unsqueeze(2) - dist.unsqueeze(1)
        return F.softplus(gaps[mask]).mean()

    hardest_pos = dist.masked_fill(~pos, float("-inf")).max(dim=1).values
    hardest_neg = dist.masked_fill(~neg, float("inf")).min(dim=1).values
    return F.softplus(hardest_pos[valid] - hardest_neg[valid]).mean()


@dataclass
class LossComponents:
    """Per-iteration loss terms; None means the method does not use the term."""

    id: torch.Tensor
    triplet: torch.Tensor
    distill: torch.Tensor | None = None
    stability: torch.Tensor | None = None
    edsn: torch.Tensor | None = None
    spd: torch.Tensor | None = None
    crl: torch.Tensor | None = None

    def items(self) -> list[tuple[str, torch.Tensor | None]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def as_floats(self) -> dict[str, float | None]:
        return {name: (None if value is None else float(value)) for name, value in self.items()}


def check_finite(components: LossComponents) -> None:
    for name, value in components.items():
        if value is not None and not math.isfinite(float(value)):
            raise NumericalFailureError(f"loss component '{name}' is not finite", name)


def total_loss(
    step: int,
    components: LossComponents,
    weights: LossWeights | None = None,
) -> torch.Tensor:
    """
    Weighted sum of the present components.

    At step 1 there is no previous model, so every retrospective term counts as 0.
    """
    check_finite(components)
    weights = weights or LossWeights()
    total = components.id * weights.id + components.triplet * weights.triplet
    if step <= 1:
        return total
    for name in RETROSPECTIVE:
        value = getattr(components, name)
        if value is not None:
            total = total + value * getattr(weights, name)
    return total
