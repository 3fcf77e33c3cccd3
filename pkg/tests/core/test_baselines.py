"""Tests for the comparison objectives and the method table."""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from gaitadapt.core.baselines import (
    PROFILES,
    compose_objective,
    crl_from_logits,
    crl_loss,
    lwf_loss,
    method_profile,
    restrict,
    sft_loss,
    spd_loss,
)
from gaitadapt.core.losses import LossComponents
from gaitadapt.errors.exceptions import ValidationError
from gaitadapt.schemas.common import MethodTag


def _components(**values: float) -> LossComponents:
    base = {"id": 0.4, "triplet": 0.3, "distill": 0.2, "stability": 0.7, "edsn": 0.05, "spd": 0.11, "crl": 0.13}
    base.update(values)
    return LossComponents(**{k: torch.tensor(v, dtype=torch.float64) for k, v in base.items()})


class TestMethodProfiles:
    """Test which terms each method switches on."""

    def test_every_method_has_a_profile(self):
        """Test the table covers every method tag."""
        assert set(PROFILES) == set(MethodTag)

    def test_only_gpak_methods_use_repository(self):
        """Test GPAK is on only for the full method and its GPAK ablation."""
        with_gpak = {tag for tag, profile in PROFILES.items() if profile.use_gpak}
        assert with_gpak == {MethodTag.GAITADAPTER, MethodTag.BASE_GPAK}

    def test_case_insensitive_lookup(self):
        """Test a method tag resolves regardless of case."""
        assert method_profile("lwf") == PROFILES[MethodTag.LWF]
        assert method_profile("gaitadapter").edsn

    def test_sft_is_not_retrospective(self):
        """Test SFT and Base use no previous-model term."""
        assert not method_profile(MethodTag.SFT).is_retrospective
        assert not method_profile(MethodTag.BASE).is_retrospective
        assert method_profile(MethodTag.CRL).is_retrospective


class TestComposeObjective:
    """Test per-method objective assembly."""

    def test_sft_is_identity_plus_triplet(self):
        """Test SFT ignores every retrospective term at any step."""
        c = _components()
        assert float(sft_loss(c)) == pytest.approx(0.7)
        assert float(compose_objective(MethodTag.SFT, 5, c)) == pytest.approx(0.7)

    def test_sft_equals_full_method_step_one(self):
        """Test SFT matches the full objective at step 1."""
        c = _components()
        assert float(sft_loss(c)) == float(compose_objective(MethodTag.GAITADAPTER, 1, c))

    def test_lwf_adds_distillation(self):
        """Test LwF is SFT plus logit distillation from step 2 on."""
        c = _components()
        assert float(lwf_loss(c)) == pytest.approx(0.4 + 0.3 + 0.2)
        assert float(lwf_loss(c, step=1)) == float(sft_loss(c))

    def test_full_method_terms(self):
        """Test the full method sums id, triplet, distill, stability and EDSN."""
        c = _components()
        assert float(compose_objective(MethodTag.GAITADAPTER, 2, c)) == pytest.approx(0.4 + 0.3 + 0.2 + 0.7 + 0.05)

    @pytest.mark.parametrize("method", list(MethodTag))
    def test_disabled_retrospection_reduces_to_sft(self, method):
        """Test zeroing every retrospective term gives SFT's value exactly."""
        c = _components(distill=0.0, stability=0.0, edsn=0.0, spd=0.0, crl=0.0)
        assert float(compose_objective(method, 3, c)) == float(sft_loss(c))

    def test_restrict_drops_unused_terms(self):
        """Test restrict sets unused retrospective terms to None."""
        restricted = restrict(_components(), method_profile(MethodTag.SPD))
        assert restricted.spd is not None
        assert restricted.distill is None and restricted.crl is None


class TestSpdLoss:
    """Test the similarity-preserving Gram penalty."""

    def test_identical_is_zero(self):
        """Test identical activations give zero."""
        a = torch.randn(5, 4, dtype=torch.float64)
        assert float(spd_loss(a, a.clone())) == 0.0

    def test_scaled_is_zero(self):
        """Test a constant rescale leaves the row-normalized Gram unchanged."""
        a = torch.randn(5, 4, dtype=torch.float64)
        assert float(spd_loss(3.0 * a, a)) == pytest.approx(0.0, abs=1e-14)

    def test_naive_gram_oracle(self):
        """Test a random 3x4 pair against explicit Gram matrices."""
        rng = np.random.default_rng(9)
        new, old = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))

        def gram(x: np.ndarray) -> np.ndarray:
            g = x @ x.T
            return g / np.linalg.norm(g, axis=1, keepdims=True)

        expected = float(((gram(new) - gram(old)) ** 2).sum() / 9)
        value = float(spd_loss(torch.from_numpy(new), torch.from_numpy(old)))
        assert value == pytest.approx(expected, abs=1e-8)

    def test_single_sample(self, caplog):
        """Test S < 2 returns zero with a warning."""
        assert float(spd_loss(torch.randn(1, 3), torch.randn(1, 3))) == 0.0
        assert "at least two samples" in caplog.text

    def test_batch_mismatch_rejected(self):
        """Test differing batch sizes are rejected."""
        with pytest.raises(ValidationError):
            spd_loss(torch.randn(2, 3), torch.randn(3, 3))


class TestCrlLoss:
    """Test the margin-hinged KL consistency loss."""

    @staticmethod
    def _pair_with_kl(kl: float) -> tuple[torch.Tensor, torch.Tensor]:
        """Two-class p, q with KL(p || q) equal to `kl`, solved by bisection on q."""
        p = 0.5
        lo, hi = 1e-9, 0.5
        for _ in range(200):
            mid = (lo + hi) / 2
            value = p * math.log(p / mid) + (1 - p) * math.log((1 - p) / (1 - mid))
            lo, hi = (mid, hi) if value > kl else (lo, mid)
        q = (lo + hi) / 2
        return (
            torch.tensor([[p, 1 - p]], dtype=torch.float64),
            torch.tensor([[q, 1 - q]], dtype=torch.float64),
        )

    def test_equal_is_zero(self):
        """Test p == q gives zero for any non-negative margin."""
        p = torch.softmax(torch.randn(4, 3, dtype=torch.float64), dim=1)
        for delta in (0.0, 0.1, 2.0):
            assert float(crl_loss(p, p.clone(), delta)) == 0.0

    def test_margin_absorbs(self):
        """Test KL = 0.3 under margin 0.5 gives zero."""
        p, q = self._pair_with_kl(0.3)
        assert float(crl_loss(p, q, 0.5)) == 0.0

    def test_hinge_value(self):
        """Test KL = 0.8 under margin 0.5 gives 0.3."""
        p, q = self._pair_with_kl(0.8)
        assert float(crl_loss(p, q, 0.5)) == pytest.approx(0.3, abs=1e-9)

    def test_monotone_in_margin(self):
        """Test the loss never increases with the margin."""
        p = torch.softmax(torch.randn(6, 4, dtype=torch.float64), dim=1)
        q = torch.softmax(torch.randn(6, 4, dtype=torch.float64), dim=1)
        values = [float(crl_loss(p, q, d)) for d in np.linspace(0, 2, 21)]
        assert all(b <= a for a, b in zip(values, values[1:], strict=False))

    def test_support_mismatch_rejected(self):
        """Test distributions over different class counts are rejected."""
        with pytest.raises(ValidationError):
            crl_loss(torch.full((1, 2), 0.5), torch.full((1, 3), 1 / 3))

    def test_negative_margin_rejected(self):
        """Test a negative margin is rejected."""
        p = torch.full((1, 2), 0.5)
        with pytest.raises(ValidationError):
            crl_loss(p, p, -0.1)

    def test_from_logits_restricts_to_old_classes(self):
        """Test new logits beyond the teacher's classes are ignored."""
        old = torch.randn(3, 2, dtype=torch.float64)
        new = torch.cat([old, torch.randn(3, 4, dtype=torch.float64)], dim=1)
        assert float(crl_from_logits(new, old, 0.0)) == pytest.approx(0.0, abs=1e-12)
