"""Comparison continual-learning objectives and the per-method term table."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import torch
import torch.nn.functional as F

from gaitadapt.core.losses import KL_FLOOR, RETROSPECTIVE, LossComponents, total_loss
from gaitadapt.errors.exceptions import ValidationError
from gaitadapt.schemas.common import MethodTag
from gaitadapt.schemas.training import LossWeights

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MethodProfile:
    """Which model parts and retrospective terms a method switches on."""

    use_gpak: bool = False
    distill: bool = False
    stability: bool = False
    edsn: bool = False
    spd: bool = False
    crl: bool = False

    def uses(self, term: str) -> bool:
        return bool(getattr(self, term))

    @property
    def is_retrospective(self) -> bool:
        return any(self.uses(term) for term in RETROSPECTIVE)


PROFILES: dict[MethodTag, MethodProfile] = {
    MethodTag.SFT: MethodProfile(),
    MethodTag.LWF: MethodProfile(distill=True),
    MethodTag.SPD: MethodProfile(spd=True),
    MethodTag.CRL: MethodProfile(crl=True),
    MethodTag.GAITADAPTER: MethodProfile(use_gpak=True, distill=True, stability=True, edsn=True),
    MethodTag.BASE: MethodProfile(),
    MethodTag.BASE_GPAK: MethodProfile(use_gpak=True, stability=True),
    MethodTag.BASE_EDSN: MethodProfile(distill=True, edsn=True),
}


def method_profile(method: MethodTag | str) -> MethodProfile:
    return PROFILES[MethodTag(method)]


def sft_loss(components: LossComponents, weights: LossWeights | None = None) -> torch.Tensor:
    """Identity plus triplet loss, nothing retrospective."""
    return compose_objective(MethodTag.SFT, 1, components, weights)


def lwf_loss(
    components: LossComponents, step: int = 2, weights: LossWeights | None = None
) -> torch.Tensor:
    """SFT plus logit distillation against the previous model."""
    return compose_objective(MethodTag.LWF, step, components, weights)


def normalized_gram(activations: torch.Tensor) -> torch.Tensor:
    flat = activations.reshape(activations.shape[0], -1)
    return F.normalize(flat @ flat.t(), p=2, dim=1)


def spd_loss(new_activations: torch.Tensor, old_activations: torch.Tensor) -> torch.Tensor:
    """Squared Frobenius gap between row-normalized batch Gram matrices, divided by S^2."""
    if new_activations.shape[0] != old_activations.shape[0]:
        raise ValidationError("SPD needs the same batch through both models")
    if new_activations.shape[0] < 2:
        logger.warning("SPD needs at least two samples, returning zero")
        return new_activations.sum() * 0.0
    g_new = normalized_gram(new_activations)
    g_old = normalized_gram(old_activations.detach())
    return F.mse_loss(g_new, g_old, reduction="mean")


def kl_divergence(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """Row-wise KL(p || q) for probability rows."""
    p = p.clamp(min=KL_FLOOR)
    q = q.clamp(min=KL_FLOOR)
    return (p * (p.log() - q.log())).sum(dim=1)


def crl_loss(p_old: torch.Tensor, q_new: torch.Tensor, delta: float = 0.1) -> torch.Tensor:
    """Mean hinge max(KL(p || q) - delta, 0) over samples."""
    if p_old.shape != q_new.shape:
        raise ValidationError(
            f"distributions must share support, got {tuple(p_old.shape)} and {tuple(q_new.shape)}"
        )
    if delta < 0:
        raise ValidationError(f"CRL margin must be non-negative, got {delta}")
    return F.relu(kl_divergence(p_old.detach(), q_new) - delta).mean()


def crl_from_logits(
    new_logits: torch.Tensor, old_logits: torch.Tensor, delta: float = 0.1
) -> torch.Tensor:
    """CRL on softmax outputs restricted to the previous model's classes."""
    old_classes = old_logits.shape[1]
    if old_classes == 0:
        return new_logits.sum() * 0.0
    p_old = torch.softmax(old_logits, dim=1)
    q_new = torch.softmax(new_logits[:, :old_classes], dim=1)
    return crl_loss(p_old, q_new, delta)


def restrict(components: LossComponents, profile: MethodProfile) -> LossComponents:
    """Drop the retrospective terms a method does not use."""
    dropped = {term: None for term in RETROSPECTIVE if not profile.uses(term)}
    return replace(components, **dropped)


def compose_objective(
    method: MethodTag | str,
    step: int,
    components: LossComponents,
    weights: LossWeights | None = None,
) -> torch.Tensor:
    return total_loss(step, restrict(components, method_profile(method)), weights)
