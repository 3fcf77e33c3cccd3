"""The full gait model and immutable snapshots of it."""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass

import torch
from torch import nn

from gaitadapt.core.backbone import ClassifierHead, SilhouetteEncoder, classify
from gaitadapt.core.baselines import method_profile
from gaitadapt.core.gpak import GaitPartitionKnowledge
from gaitadapt.errors.exceptions import NumericalFailureError
from gaitadapt.schemas.training import ModelSettings, TrainConfig

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class ModelOutput:
    embeddings: torch.Tensor  # S x (m*C), concatenated injected parts
    logits: torch.Tensor  # S x class_count


class GaitAdapterModel(nn.Module):
    """Extractor, part-knowledge module and expandable classifier."""

    def __init__(self, settings: ModelSettings) -> None:
        super().__init__()
        self.settings = settings
        self.encoder = SilhouetteEncoder(
            channels=settings.channels,
            frame_height=settings.frame_height,
            feature_height=settings.feature_height,
            temporal_window=settings.temporal_window,
        )
        self.gpak = GaitPartitionKnowledge(
            channels=settings.channels,
            repository_size=settings.repository_size,
            parts=settings.parts,
            graph_type=settings.graph_type,
            use_gpak=settings.use_gpak,
        )
        self.head = ClassifierHead(settings.embedding_width)

    @property
    def class_count(self) -> int:
        return self.head.class_count

    def embed(self, frames: torch.Tensor) -> torch.Tensor:
        fmap = self.encoder(frames)
        if not torch.isfinite(fmap).all():
            raise NumericalFailureError("non-finite activations in feature extractor", "extractor")
        parts = self.gpak(fmap)
        return parts.reshape(frames.shape[0], self.settings.embedding_width)

    def forward(self, frames: torch.Tensor) -> ModelOutput:
        embeddings = self.embed(frames)
        return ModelOutput(embeddings=embeddings, logits=classify(embeddings, self.head))


def model_settings(config: TrainConfig) -> ModelSettings:
    return ModelSettings(
        frame_height=config.frame_height,
        channels=config.channels,
        feature_height=config.feature_height,
        temporal_window=config.temporal_window,
        parts=config.parts,
        repository_size=config.repository_size,
        graph_type=config.graph_type,
        use_gpak=method_profile(config.method).use_gpak,
    )


def build_model(config: TrainConfig, device: torch.device | str = "cpu") -> GaitAdapterModel:
    """Initialise a model from the run seed; every method starts from the same weights."""
    generator_state = torch.random.get_rng_state()
    torch.manual_seed(config.seed)
    try:
        model = GaitAdapterModel(model_settings(config))
    finally:
        torch.random.set_rng_state(generator_state)
    return model.to(device=device, dtype=DTYPES[config.dtype])


def state_digest(module: nn.Module) -> str:
    """sha256 over every parameter and buffer, in name order."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(str(tuple(tensor.shape)).encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


@dataclass(frozen=True)
class ModelSnapshot:
    """Frozen copy of the model as it stood at the end of `step`."""

    model: GaitAdapterModel
    step: int
    class_count: int
    digest: str

    def verify(self) -> bool:
        return state_digest(self.model) == self.digest

    @torch.no_grad()
    def __call__(self, frames: torch.Tensor) -> ModelOutput:
        return self.model(frames)


def take_snapshot(model: GaitAdapterModel, step: int) -> ModelSnapshot:
    frozen = copy.deepcopy(model)
    frozen.eval()
    for param in frozen.parameters():
        param.requires_grad_(False)
    return ModelSnapshot(
        model=frozen,
        step=step,
        class_count=frozen.class_count,
        digest=state_digest(frozen),
    )
