"""Continual gait recognition with graph-based part knowledge and negative-pair distillation."""

__version__ = "0.1.0"

from gaitadapt.core.model import GaitAdapterModel, build_model  # noqa: E402
from gaitadapt.data.protocol import build_stream  # noqa: E402
from gaitadapt.data.synthetic import generate_domain_stream  # noqa: E402
from gaitadapt.schemas.common import MethodTag, ProtocolTag  # noqa: E402
from gaitadapt.schemas.training import TrainConfig  # noqa: E402

__all__ = [
    "__version__",
    "GaitAdapterModel",
    "build_model",
    "build_stream",
    "generate_domain_stream",
    "TrainConfig",
    "MethodTag",
    "ProtocolTag",
]
