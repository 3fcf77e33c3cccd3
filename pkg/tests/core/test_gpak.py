"""Tests for partitioning, GeM pooling, the transfer graph and the repository."""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from gaitadapt.core.gpak import (
    GaitPartitionKnowledge,
    build_transfer_graph,
    cross_adjacency,
    full_transfer_graph,
    gem_pool,
    inject,
    partition,
    reassemble,
    repository_stability_loss,
    transfer_convolve,
)
from gaitadapt.errors.exceptions import ValidationError
from gaitadapt.schemas.common import GraphType


def _values(*vals: float) -> torch.Tensor:
    """One channel, values laid out along W."""
    return torch.tensor(vals, dtype=torch.float64).reshape(1, 1, 1, len(vals))


class TestPartition:
    """Test horizontal part slicing."""

    def test_single_part_is_whole_map(self):
        """Test m = 1 returns the input."""
        fmap = torch.randn(2, 3, 2, 4, 5)
        assert torch.equal(partition(fmap, 1), fmap)

    def test_sixteen_one_row_parts(self):
        """Test m = 16 on 16 rows gives one-row slices."""
        fmap = torch.randn(2, 3, 2, 16, 5)
        parts = partition(fmap, 16)
        assert parts.shape == (32, 3, 2, 1, 5)
        assert torch.equal(parts[16 + 7, :, :, 0], fmap[1, :, :, 7])

    def test_index_arithmetic_oracle(self):
        """Test m = 4 on 8 rows against explicit slicing."""
        fmap = torch.arange(2 * 3 * 2 * 8 * 5, dtype=torch.float64).reshape(2, 3, 2, 8, 5)
        parts = partition(fmap, 4)
        for s in range(2):
            for i in range(4):
                assert torch.equal(parts[s * 4 + i], fmap[s, :, :, 2 * i : 2 * i + 2])

    def test_reassembly_is_bit_exact(self):
        """Test that concatenating parts reproduces the input."""
        fmap = torch.randn(3, 4, 2, 16, 6)
        for m in (1, 2, 4, 8, 16):
            assert torch.equal(reassemble(partition(fmap, m), m), fmap)

    def test_indivisible_height_rejected(self):
        """Test that H' not divisible by m is rejected."""
        with pytest.raises(ValidationError):
            partition(torch.zeros(1, 1, 1, 6, 2), 4)


class TestGemPool:
    """Test generalized-mean pooling."""

    def test_alpha_one_is_mean(self):
        """Test alpha = 1 on {1,3,5,7} gives 4."""
        assert float(gem_pool(_values(1, 3, 5, 7), 1.0)[0]) == pytest.approx(4.0, abs=1e-12)

    def test_alpha_two(self):
        """Test alpha = 2 on {3,4} gives sqrt(12.5)."""
        assert float(gem_pool(_values(3, 4), 2.0)[0]) == pytest.approx(math.sqrt(12.5), abs=1e-9)

    def test_large_alpha_approaches_max(self):
        """Test alpha = 64 lands within 5% of the maximum."""
        value = float(gem_pool(_values(1, 3, 5, 7), 64.0)[0])
        assert abs(value - 7.0) / 7.0 < 0.05

    def test_bounded_between_min_and_max(self):
        """Test outputs lie within the pooled range for alpha >= 1."""
        rng = np.random.default_rng(0)
        x = torch.from_numpy(rng.uniform(0.1, 5.0, size=(4, 3, 2, 2, 3)))
        for alpha in (1.0, 1.5, 3.0, 10.0):
            pooled = gem_pool(x, alpha)
            flat = x.flatten(start_dim=2)
            assert torch.all(pooled >= flat.min(dim=-1).values - 1e-12)
            assert torch.all(pooled <= flat.max(dim=-1).values + 1e-12)

    def test_mean_at_alpha_one_random(self):
        """Test alpha = 1 equals the arithmetic mean within 1e-7."""
        x = torch.rand(5, 4, 3, 2, 2, dtype=torch.float64) + 0.01
        np.testing.assert_allclose(gem_pool(x, 1.0), x.mean(dim=(2, 3, 4)), atol=1e-7)

    def test_negative_entries_clamped(self):
        """Test negatives pool as zeros."""
        assert float(gem_pool(_values(-4, 2), 1.0)[0]) == 1.0

    def test_zeros_keep_the_mean_exact(self):
        """Test {0, 0, 0, 1} at alpha = 1 pools to 0.25 within 1e-7."""
        assert float(gem_pool(_values(0, 0, 0, 1), 1.0)[0]) == pytest.approx(0.25, abs=1e-7)

    @pytest.mark.parametrize("alpha", [0.5, 1.0, 3.0])
    def test_all_zero_part_pools_to_zero(self, alpha):
        """Test an all-zero part stays within its [0, 0] range."""
        assert float(gem_pool(_values(0, 0, 0), alpha)[0]) == 0.0

    def test_gradients_finite_at_zero(self):
        """Test gradients w.r.t. input and exponent are finite when parts contain zeros."""
        x = torch.tensor([0.0, 0.0, 2.0, 0.0, 0.0, 0.0], dtype=torch.float64).reshape(2, 1, 1, 3)
        x.requires_grad_(True)
        alpha = torch.tensor(3.0, dtype=torch.float64, requires_grad=True)
        gem_pool(x, alpha).sum().backward()
        assert x.grad is not None and torch.isfinite(x.grad).all()
        assert alpha.grad is not None and torch.isfinite(alpha.grad)

    @pytest.mark.parametrize("alpha", [0.0, -1.0])
    def test_non_positive_alpha_rejected(self, alpha):
        """Test alpha <= 0 is rejected."""
        with pytest.raises(ValidationError):
            gem_pool(_values(1, 2), alpha)


class TestCrossAdjacency:
    """Test the Gaussian-kernel softmax between parts and repository."""

    def test_equidistant_is_uniform(self):
        """Test a vertex equidistant from all repository vertices gets 1/N."""
        f = torch.zeros(1, 2, dtype=torch.float64)
        k = torch.tensor([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], dtype=torch.float64)
        np.testing.assert_allclose(cross_adjacency(f, k), np.full((1, 4), 0.25), atol=1e-12)

    def test_two_vertex_softmax(self):
        """Test squared distances {0, 2} give softmax(0, -1)."""
        f = torch.zeros(1, 2, dtype=torch.float64)
        k = torch.tensor([[0.0, 0.0], [1.0, 1.0]], dtype=torch.float64)
        a = cross_adjacency(f, k)[0]
        assert float(a[0]) == pytest.approx(0.7310585786, abs=1e-9)
        assert float(a[1]) == pytest.approx(0.2689414214, abs=1e-9)

    def test_rows_sum_to_one(self):
        """Test row-stochasticity on random inputs, all entries in (0, 1]."""
        gen = torch.Generator().manual_seed(0)
        for _ in range(20):
            f = torch.randn(5, 3, generator=gen)
            k = torch.randn(4, 3, generator=gen)
            a = cross_adjacency(f, k)
            assert torch.allclose(a.sum(dim=1), torch.ones(5), atol=1e-6)
            assert torch.all(a > 0) and torch.all(a <= 1)


class TestTransferGraph:
    """Test the block adjacency."""

    def test_single_edge(self):
        """Test A_c = [[1]] gives [[0, 1], [1, 0]]."""
        assert torch.equal(build_transfer_graph(torch.ones(1, 1)), torch.tensor([[0.0, 1.0], [1.0, 0.0]]))

    def test_symmetric_with_zero_diagonal_blocks(self):
        """Test A_t equals its transpose and its diagonal blocks are zero."""
        a_c = cross_adjacency(torch.randn(6, 3), torch.randn(4, 3))
        a_t = build_transfer_graph(a_c)
        assert torch.equal(a_t, a_t.t())
        assert torch.count_nonzero(a_t[:6, :6]) == 0
        assert torch.count_nonzero(a_t[6:, 6:]) == 0

    def test_block_positions(self):
        """Test a 2x3 A_c lands in the upper-right block of a 5x5 A_t."""
        a_c = torch.arange(6, dtype=torch.float64).reshape(2, 3) + 1
        a_t = build_transfer_graph(a_c)
        assert a_t.shape == (5, 5)
        assert torch.equal(a_t[:2, 2:], a_c)
        assert torch.equal(a_t[2:, :2], a_c.t())

    def test_full_graph_rows_exclude_self(self):
        """Test the fully connected variant has a zero diagonal and stochastic rows."""
        a = full_transfer_graph(torch.randn(3, 2), torch.randn(2, 2))
        assert torch.count_nonzero(torch.diagonal(a)) == 0
        assert torch.allclose(a.sum(dim=1), torch.ones(5), atol=1e-6)


class TestTransferConvolve:
    """Test the graph convolution and injection."""

    def test_single_pair_routes_repository(self):
        """Test identity weight and activation copy the K row into the f row."""
        f = torch.tensor([[1.0, 2.0]])
        k = torch.tensor([[5.0, -3.0]])
        a_t = build_transfer_graph(torch.ones(1, 1))
        v_f = transfer_convolve(a_t, f, k, torch.eye(2), activation=None)
        assert torch.equal(v_f, k)

    def test_zero_weight(self):
        """Test W_t = 0 gives relu(0) = 0."""
        f, k = torch.randn(4, 3), torch.randn(2, 3)
        a_t = build_transfer_graph(cross_adjacency(f, k))
        assert torch.count_nonzero(transfer_convolve(a_t, f, k, torch.zeros(3, 3))) == 0

    def test_matches_triple_loop_oracle(self):
        """Test against an explicit loop over vertices and channels."""
        rng = np.random.default_rng(1)
        f = torch.from_numpy(rng.normal(size=(4, 3)))
        k = torch.from_numpy(rng.normal(size=(2, 3)))
        w = torch.from_numpy(rng.normal(size=(3, 3)))
        a_t = build_transfer_graph(cross_adjacency(f, k))
        v = np.vstack([f.numpy(), k.numpy()])
        vw = np.zeros_like(v)
        for i in range(v.shape[0]):
            for c in range(3):
                vw[i, c] = sum(v[i, j] * w[j, c].item() for j in range(3))
        expected = np.zeros((4, 3))
        for i in range(4):
            for c in range(3):
                expected[i, c] = max(0.0, sum(a_t[i, j].item() * vw[j, c] for j in range(6)))
        np.testing.assert_allclose(transfer_convolve(a_t, f, k, w).numpy(), expected, rtol=1e-6, atol=1e-12)

    def test_feature_isolation(self):
        """Test zeroing one part vertex never changes another part's output."""
        gen = torch.Generator().manual_seed(4)
        f = torch.randn(5, 3, generator=gen, dtype=torch.float64)
        k = torch.randn(4, 3, generator=gen, dtype=torch.float64)
        w = torch.randn(3, 3, generator=gen, dtype=torch.float64)
        base = transfer_convolve(build_transfer_graph(cross_adjacency(f, k)), f, k, w)
        for row in range(5):
            g = f.clone()
            g[row] = 0
            out = transfer_convolve(build_transfer_graph(cross_adjacency(g, k)), g, k, w)
            others = [i for i in range(5) if i != row]
            assert torch.equal(out[others], base[others])

    def test_inject(self):
        """Test injection is an elementwise sum and rejects shape mismatches."""
        f, v = torch.randn(3, 2), torch.randn(3, 2)
        assert torch.equal(inject(v, f), v + f)
        assert torch.equal(inject(torch.zeros(3, 2), f), f)
        with pytest.raises(ValidationError):
            inject(torch.zeros(2, 2), f)


class TestRepositoryStability:
    """Test the repository drift penalty."""

    def test_no_drift_is_ln2(self):
        """Test K == K_prev gives ln 2."""
        k = torch.randn(6, 4, dtype=torch.float64)
        assert float(repository_stability_loss(k, k.clone())) == pytest.approx(math.log(2), abs=1e-9)

    def test_unit_drift(self):
        """Test a single vertex at distance 1 gives ln(1 + e)."""
        k = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        prev = torch.zeros(1, 2, dtype=torch.float64)
        assert float(repository_stability_loss(k, prev)) == pytest.approx(math.log1p(math.e), abs=1e-9)

    def test_monotone_in_distance(self):
        """Test the loss never decreases as a vertex moves away."""
        prev = torch.zeros(1, 3, dtype=torch.float64)
        values = [
            float(repository_stability_loss(torch.tensor([[d, 0.0, 0.0]], dtype=torch.float64), prev))
            for d in np.linspace(0, 3, 13)
        ]
        assert all(b >= a for a, b in zip(values, values[1:], strict=False))

    def test_missing_snapshot_rejected(self):
        """Test K_prev absence is rejected."""
        with pytest.raises(ValidationError):
            repository_stability_loss(torch.zeros(2, 2), None)

    def test_finite_gradient_at_zero_drift(self):
        """Test the gradient at K == K_prev is finite (zero)."""
        k = torch.zeros(2, 3, dtype=torch.float64, requires_grad=True)
        repository_stability_loss(k, torch.zeros(2, 3, dtype=torch.float64)).backward()
        assert torch.all(k.grad == 0)


class TestGaitPartitionKnowledge:
    """Test the module as a whole."""

    def test_output_rows(self):
        """Test F has m*S rows of width C."""
        torch.manual_seed(0)
        module = GaitPartitionKnowledge(channels=4, repository_size=5, parts=2)
        out = module(torch.rand(3, 4, 2, 4, 3))
        assert out.shape == (6, 4)
        assert torch.isfinite(out).all()

    def test_alpha_starts_at_three(self):
        """Test the GeM exponent is initialised to 3 and stays positive."""
        module = GaitPartitionKnowledge(channels=2)
        assert float(module.alpha) == pytest.approx(3.0)

    def test_disabled_passes_pooled_parts(self):
        """Test use_gpak=False returns the pooled part vectors unchanged."""
        module = GaitPartitionKnowledge(channels=2, parts=2, use_gpak=False)
        fmap = torch.rand(1, 2, 1, 2, 2)
        assert torch.equal(module(fmap), module.pool_parts(fmap))

    def test_full_graph_variant(self):
        """Test the fully connected graph type runs end to end."""
        module = GaitPartitionKnowledge(channels=3, repository_size=4, parts=2, graph_type=GraphType.FULL)
        assert module(torch.rand(2, 3, 1, 2, 2)).shape == (4, 3)

    def test_set_previous_copies(self):
        """Test K_prev is a frozen copy, unaffected by later edits of K."""
        module = GaitPartitionKnowledge(channels=2, repository_size=3)
        assert module.previous is None
        module.set_previous(module.repository)
        with torch.no_grad():
            module.repository.add_(1.0)
        assert module.previous is not None
        assert not torch.equal(module.previous, module.repository)
        assert float(module.stability_loss()) > math.log(2)

    def test_gradients_match_finite_differences(self, float64):
        """Test d loss / d (K, W_t, log alpha) against central differences on a 3-part, 2-sample instance."""
        torch.manual_seed(0)
        module = GaitPartitionKnowledge(channels=3, repository_size=4, parts=3)
        module.set_previous(module.repository.detach() + 0.1 * torch.randn(4, 3))
        fmap = torch.rand(2, 3, 2, 3, 2) + 0.1

        def loss() -> torch.Tensor:
            return module(fmap).pow(2).sum() + module.stability_loss()

        params = [module.repository, module.transfer_weight, module.log_alpha]
        grads = torch.autograd.grad(loss(), params)
        h = 1e-5
        for param, grad in zip(params, grads, strict=True):
            flat = param.data.view(-1)
            for idx in range(flat.numel()):
                original = flat[idx].item()
                flat[idx] = original + h
                plus = float(loss())
                flat[idx] = original - h
                minus = float(loss())
                flat[idx] = original
                numeric = (plus - minus) / (2 * h)
                analytic = grad.view(-1)[idx].item()
                assert abs(numeric - analytic) <= 1e-4 * max(1.0, abs(numeric), abs(analytic))
