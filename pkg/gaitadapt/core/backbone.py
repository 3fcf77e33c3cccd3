"""Silhouette feature extractor and the expandable identity classifier."""

from __future__ import annotations

import copy
import math
from collections.abc import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from gaitadapt.data.sequence import SilhouetteSequence, check_resolution
from gaitadapt.errors.exceptions import NumericalFailureError, ValidationError


def fit_length(frames: np.ndarray, length: int) -> np.ndarray:
    """Clip, or cyclically pad, a T x H x W clip to exactly `length` frames."""
    t = frames.shape[0]
    if t >= length:
        return frames[:length]
    return frames[np.arange(length) % t]


def stack_frames(
    batch: Sequence[SilhouetteSequence],
    length: int,
    dtype: torch.dtype = torch.float32,
    device: torch.device | str = "cpu",
) -> torch.Tensor:
    """Batch sequences into an S x T x H x W tensor."""
    check_resolution(batch)
    stacked = np.stack([fit_length(seq.frames, length) for seq in batch])
    return torch.from_numpy(stacked).to(device=device, dtype=dtype)


class SilhouetteEncoder(nn.Module):
    """
    Three spatial convolutions applied frame by frame, then temporal mean pooling.

    Output is S x C x T' x H' x W' with H' fixed to `feature_height`, so every
    supported part count divides it.
    """

    def __init__(
        self,
        channels: int,
        frame_height: int,
        feature_height: int = 16,
        temporal_window: int = 3,
    ) -> None:
        super().__init__()
        self.channels = channels
        self.feature_height = feature_height
        self.temporal_window = temporal_window

        hidden = max(channels // 2, 1)
        pools = 0
        while pools < 2 and frame_height // (2 ** (pools + 1)) >= feature_height:
            pools += 1

        layers: list[nn.Module] = [
            nn.Conv2d(1, hidden, kernel_size=3, padding=1),
            nn.LeakyReLU(0.01),
        ]
        if pools >= 1:
            layers.append(nn.MaxPool2d(2))
        layers += [nn.Conv2d(hidden, hidden, kernel_size=3, padding=1), nn.LeakyReLU(0.01)]
        if pools >= 2:
            layers.append(nn.MaxPool2d(2))
        self.body = nn.Sequential(*layers)
        self.final = nn.Conv2d(hidden, channels, kernel_size=3, padding=1)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        if frames.dim() != 4:
            raise ValidationError(f"expected S x T x H x W frames, got shape {tuple(frames.shape)}")
        s, t, h, w = frames.shape
        x = frames.reshape(s * t, 1, h, w)
        x = F.leaky_relu(self.final(self.body(x)), 0.01)
        if x.shape[-2] != self.feature_height:
            x = F.adaptive_avg_pool2d(x, (self.feature_height, x.shape[-1]))
        c, fh, fw = x.shape[1:]
        x = x.reshape(s, t, c, fh, fw).permute(0, 2, 1, 3, 4)

        window = min(self.temporal_window, t)
        t_out = t // window
        x = x[:, :, : t_out * window].reshape(s, c, t_out, window, fh, fw).mean(dim=3)
        return x


def extract_features(
    batch: Sequence[SilhouetteSequence],
    encoder: SilhouetteEncoder,
    length: int,
) -> torch.Tensor:
    """Run the extractor over a batch of sequences (pads or clips to `length`)."""
    param = next(encoder.parameters())
    frames = stack_frames(batch, length, dtype=param.dtype, device=param.device)
    fmap = encoder(frames)
    if not torch.isfinite(fmap).all():
        raise NumericalFailureError("non-finite activations in feature extractor", "extractor")
    return fmap


class ClassifierHead(nn.Module):
    """Linear identity classifier whose class count only ever grows."""

    def __init__(self, in_features: int, num_classes: int = 0) -> None:
        super().__init__()
        self.in_features = in_features
        self.weight = nn.Parameter(torch.empty(0, in_features))
        self.bias = nn.Parameter(torch.empty(0))
        self.expand(num_classes)

    @property
    def class_count(self) -> int:
        return int(self.weight.shape[0])

    def expand(self, new_classes: int, generator: torch.Generator | None = None) -> None:
        """
        Append `new_classes` rows in place.

        Old rows are copied bit-exactly; new rows are drawn from
        U(-1/sqrt(in), 1/sqrt(in)) and new biases start at zero.
        """
        if new_classes < 0:
            raise ValidationError(f"new_classes must be >= 0, got {new_classes}")
        if new_classes == 0:
            return
        bound = 1.0 / math.sqrt(self.in_features)
        weight = self.weight.data
        new_rows = torch.empty(new_classes, self.in_features, dtype=weight.dtype, device=weight.device)
        new_rows.uniform_(-bound, bound, generator=generator)
        new_bias = torch.zeros(new_classes, dtype=weight.dtype, device=weight.device)
        self.weight = nn.Parameter(torch.cat([weight, new_rows], dim=0))
        self.bias = nn.Parameter(torch.cat([self.bias.data, new_bias], dim=0))

    def resize_(self, num_classes: int) -> None:
        """Reallocate to `num_classes` rows before loading a state dict."""
        dtype, device = self.weight.dtype, self.weight.device
        self.weight = nn.Parameter(torch.zeros(num_classes, self.in_features, dtype=dtype, device=device))
        self.bias = nn.Parameter(torch.zeros(num_classes, dtype=dtype, device=device))

    def forward(self, embedding: torch.Tensor) -> torch.Tensor:
        if embedding.shape[-1] != self.in_features:
            raise ValidationError(
                f"embedding width {embedding.shape[-1]} does not match head input {self.in_features}"
            )
        # Per-row reduction: a logit never depends on how many classes exist
        return (embedding.unsqueeze(-2) * self.weight).sum(dim=-1) + self.bias


def classify(embedding: torch.Tensor, head: ClassifierHead) -> torch.Tensor:
    logits = head(embedding)
    if not torch.isfinite(logits).all():
        raise NumericalFailureError("non-finite logits", "classifier")
    return logits


def expand_head(
    head: ClassifierHead, new_classes: int, generator: torch.Generator | None = None
) -> ClassifierHead:
    """Return a copy of `head` with `new_classes` extra identities."""
    expanded = copy.deepcopy(head)
    expanded.expand(new_classes, generator=generator)
    return expanded


def id_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean softmax cross-entropy against identity labels."""
    if labels.numel() and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValidationError(
            f"labels must lie in [0, {logits.shape[1]}), got range"
            f" [{int(labels.min())}, {int(labels.max())}]"
        )
    return F.cross_entropy(logits, labels)
