"""
Part-level knowledge transfer through a learnable graph repository.

Feature maps are cut into horizontal parts, GeM-pooled into vertices, and
exchanged with a repository of learnable vertices over a bipartite graph
whose weights come from a Gaussian kernel. The transferred vertices are
added back onto the part features.
"""

from __future__ import annotations

import math
from collections.abc import Callable

import torch
import torch.nn.functional as F
from torch import nn

from gaitadapt.errors.exceptions import NumericalFailureError, ValidationError
from gaitadapt.schemas.common import GraphType

DEFAULT_ALPHA = 3.0

Activation = Callable[[torch.Tensor], torch.Tensor]


def partition(fmap: torch.Tensor, parts: int) -> torch.Tensor:
    """
    Split an S x C x T x H x W map into m horizontal slices per sample.

    Returns an (m*S) x C x T x h x W tensor, sample-major: row s*m + i holds
    rows [i*h, (i+1)*h) of sample s.
    """
    if fmap.dim() != 5:
        raise ValidationError(f"expected S x C x T x H x W feature map, got {tuple(fmap.shape)}")
    s, c, t, h, w = fmap.shape
    if parts < 1 or h % parts != 0:
        raise ValidationError(f"feature height {h} is not divisible by part count {parts}")
    ph = h // parts
    x = fmap.reshape(s, c, t, parts, ph, w).permute(0, 3, 1, 2, 4, 5)
    return x.reshape(s * parts, c, t, ph, w)


def reassemble(part_maps: torch.Tensor, parts: int) -> torch.Tensor:
    """Inverse of `partition`."""
    n, c, t, ph, w = part_maps.shape
    s = n // parts
    x = part_maps.reshape(s, parts, c, t, ph, w).permute(0, 2, 3, 1, 4, 5)
    return x.reshape(s, c, t, parts * ph, w)


def _masked_pow(x: torch.Tensor, exponent: torch.Tensor) -> torch.Tensor:
    # Zeros stay exactly zero with zero gradient w.r.t. both x and the exponent
    positive = x > 0
    safe = torch.where(positive, x, torch.ones_like(x))
    return torch.where(positive, safe.pow(exponent), torch.zeros_like(x))


def gem_pool(part_maps: torch.Tensor, alpha: torch.Tensor | float) -> torch.Tensor:
    """Generalized mean over the last three axes (T, h, W): (mean x^alpha)^(1/alpha)."""
    alpha_t = torch.as_tensor(alpha, dtype=part_maps.dtype, device=part_maps.device)
    if not bool((alpha_t > 0).all()):
        raise ValidationError(f"GeM exponent must be positive, got {float(alpha_t)}")
    if part_maps.dim() < 4:
        raise ValidationError(f"gem_pool expects C x T x h x W parts, got {tuple(part_maps.shape)}")
    pooled = _masked_pow(part_maps.clamp(min=0.0), alpha_t).flatten(start_dim=-3).mean(dim=-1)
    return _masked_pow(pooled, 1.0 / alpha_t)


def _squared_distances(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (a.unsqueeze(1) - b.unsqueeze(0)).pow(2).sum(dim=-1)


def cross_adjacency(f: torch.Tensor, repository: torch.Tensor) -> torch.Tensor:
    """Row-softmax of -0.5 * squared distance between part vertices and repository vertices."""
    if f.shape[-1] != repository.shape[-1]:
        raise ValidationError(
            f"part width {f.shape[-1]} does not match repository width {repository.shape[-1]}"
        )
    return torch.softmax(-0.5 * _squared_distances(f, repository), dim=1)


def build_transfer_graph(a_c: torch.Tensor) -> torch.Tensor:
    """Block adjacency [[0, A_c], [A_c^T, 0]]."""
    n, r = a_c.shape
    top = torch.cat([a_c.new_zeros(n, n), a_c], dim=1)
    bottom = torch.cat([a_c.t(), a_c.new_zeros(r, r)], dim=1)
    return torch.cat([top, bottom], dim=0)


def full_transfer_graph(f: torch.Tensor, repository: torch.Tensor) -> torch.Tensor:
    """Kernel graph over all vertices with self-loops excluded."""
    vertices = torch.cat([f, repository], dim=0)
    logits = -0.5 * _squared_distances(vertices, vertices)
    eye = torch.eye(vertices.shape[0], dtype=torch.bool, device=vertices.device)
    return torch.softmax(logits.masked_fill(eye, float("-inf")), dim=1)


def transfer_convolve(
    a_t: torch.Tensor,
    f: torch.Tensor,
    repository: torch.Tensor,
    weight: torch.Tensor,
    activation: Activation | None = F.relu,
) -> torch.Tensor:
    """
    One graph convolution over the stacked vertices [f; K].

    Only the first m*S rows (the part vertices) are returned; repository rows
    are discarded and K moves only by gradient descent.
    """
    n = f.shape[0]
    vertices = torch.cat([f, repository], dim=0)
    if a_t.shape != (vertices.shape[0], vertices.shape[0]):
        raise ValidationError(
            f"adjacency shape {tuple(a_t.shape)} does not match {vertices.shape[0]} vertices"
        )
    if weight.shape != (f.shape[1], f.shape[1]):
        raise ValidationError(f"transfer weight must be {f.shape[1]}x{f.shape[1]}")
    out = a_t @ (vertices @ weight)
    if activation is not None:
        out = activation(out)
    if not torch.isfinite(out).all():
        raise NumericalFailureError("non-finite graph convolution output", "gpak")
    return out[:n]


def inject(v_f: torch.Tensor, f: torch.Tensor) -> torch.Tensor:
    if v_f.shape != f.shape:
        raise ValidationError(f"cannot inject {tuple(v_f.shape)} into {tuple(f.shape)}")
    return v_f + f


def repository_stability_loss(
    repository: torch.Tensor, repository_prev: torch.Tensor | None
) -> torch.Tensor:
    """Mean softplus of the Euclidean drift of each repository vertex (ln 2 at zero drift)."""
    if repository_prev is None:
        raise ValidationError("repository stability needs the previous-step repository")
    if repository.shape != repository_prev.shape:
        raise ValidationError("repository snapshot shape differs from the live repository")
    sq = (repository - repository_prev.detach()).pow(2).sum(dim=1)
    positive = sq > 0
    # sqrt has no finite gradient at 0
    drift = torch.where(positive, sq.clamp(min=1e-30).sqrt(), torch.zeros_like(sq))
    return F.softplus(drift).mean()


class GaitPartitionKnowledge(nn.Module):
    """
    Partition, pool, transfer and inject.

    Holds the learnable GeM exponent (as its log), the repository K, the
    transfer weight W_t and a frozen copy of the previous step's repository.
    """

    def __init__(
        self,
        channels: int,
        repository_size: int = 64,
        parts: int = 16,
        graph_type: GraphType = GraphType.BIPARTITE,
        use_gpak: bool = True,
    ) -> None:
        super().__init__()
        self.channels = channels
        self.parts = parts
        self.graph_type = GraphType(graph_type)
        self.use_gpak = use_gpak

        scale = 1.0 / math.sqrt(channels)
        self.log_alpha = nn.Parameter(torch.tensor(math.log(DEFAULT_ALPHA)))
        self.repository = nn.Parameter(torch.randn(repository_size, channels) * scale)
        self.transfer_weight = nn.Parameter(torch.empty(channels, channels).uniform_(-scale, scale))
        self.register_buffer("repository_prev", torch.zeros(repository_size, channels))
        self.register_buffer("has_previous", torch.tensor(False))

    @property
    def alpha(self) -> torch.Tensor:
        return self.log_alpha.exp()

    @property
    def previous(self) -> torch.Tensor | None:
        return self.repository_prev if bool(self.has_previous) else None

    def set_previous(self, repository: torch.Tensor) -> None:
        """Freeze a copy of `repository` as K_prev."""
        self.repository_prev.copy_(repository.detach())
        self.has_previous.fill_(True)

    def pool_parts(self, fmap: torch.Tensor) -> torch.Tensor:
        return gem_pool(partition(fmap, self.parts), self.alpha)

    def transfer_graph(self, f: torch.Tensor) -> torch.Tensor:
        if self.graph_type is GraphType.FULL:
            return full_transfer_graph(f, self.repository)
        return build_transfer_graph(cross_adjacency(f, self.repository))

    def forward(self, fmap: torch.Tensor) -> torch.Tensor:
        """Return the (m*S) x C injected part features."""
        f = self.pool_parts(fmap)
        if not self.use_gpak:
            return f
        a_t = self.transfer_graph(f)
        v_f = transfer_convolve(a_t, f, self.repository, self.transfer_weight)
        return inject(v_f, f)

    def stability_loss(self) -> torch.Tensor:
        return repository_stability_loss(self.repository, self.previous)
