"""Silhouette data: sequences, synthetic generation, ingestion and stream protocols."""

from gaitadapt.data.ingest import export_directory, ingest_directory, load_stream
from gaitadapt.data.protocol import StreamConfig, build_stream
from gaitadapt.data.sequence import GaitDataset, SilhouetteSequence, StepDataset
from gaitadapt.data.synthetic import (
    DomainSpec,
    IdentitySpec,
    generate_dataset,
    generate_domain,
    generate_domain_stream,
    generate_identities,
    generate_identity,
    render_sequence,
)

__all__ = [
    "SilhouetteSequence",
    "StepDataset",
    "GaitDataset",
    "IdentitySpec",
    "DomainSpec",
    "generate_identity",
    "generate_identities",
    "generate_domain",
    "render_sequence",
    "generate_domain_stream",
    "generate_dataset",
    "ingest_directory",
    "export_directory",
    "load_stream",
    "StreamConfig",
    "build_stream",
]
