"""On-disk silhouette datasets: ingestion, export and stream manifests."""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import os
import re
import tempfile
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from gaitadapt.data.sequence import SilhouetteSequence, StepDataset
from gaitadapt.errors.exceptions import DataError
from gaitadapt.schemas.common import Condition
from gaitadapt.schemas.manifest import StepManifest, StreamManifest

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
STREAM_MANIFEST = "stream.json"

_NUMBER = re.compile(r"(\d+)")


@dataclass
class IngestResult:
    """Sequences read from disk plus the ones rejected along the way."""

    sequences: list[SilhouetteSequence] = field(default_factory=list)
    rejected: list[tuple[str, str]] = field(default_factory=list)  # (path, reason)


def _frame_index(path: Path) -> int:
    numbers = _NUMBER.findall(path.stem)
    return int(numbers[-1]) if numbers else -1


def _parse_condition(name: str) -> Condition:
    prefix = name.split("-")[0]
    try:
        return Condition(prefix)
    except ValueError:
        return Condition.OTHER


def _parse_view(name: str) -> int:
    digits = "".join(_NUMBER.findall(name))
    return int(digits) if digits else 0


def _read_frame(path: Path, height: int, width: int) -> np.ndarray:
    with Image.open(path) as img:
        gray = img.convert("L")
        if gray.size != (width, height):
            gray = gray.resize((width, height), Image.Resampling.NEAREST)
        return np.asarray(gray, dtype=np.float32) / 255.0


def _subdirs(path: Path) -> list[Path]:
    return sorted(p for p in path.iterdir() if p.is_dir())


def ingest_directory(
    root: Path,
    height: int = 64,
    width: int = 44,
    domain_id: int = 0,
) -> IngestResult:
    """
    Read `root/<subject-id>/<condition>/<view>/<frame####>.<image>`.

    Frames are ordered by the last number in their file name, scaled to [0, 1]
    and resized to height x width by nearest neighbour. Empty sequence
    directories are skipped with a warning; a sequence with an unreadable
    frame is rejected and reported with the offending path.
    """
    if not root.is_dir():
        raise DataError(f"Dataset root does not exist: {root}")

    result = IngestResult()
    for subject_dir in _subdirs(root):
        try:
            identity = int(subject_dir.name)
        except ValueError:
            logger.warning(f"Skipping non-numeric subject directory: {subject_dir}")
            continue
        for condition_dir in _subdirs(subject_dir):
            condition = _parse_condition(condition_dir.name)
            for view_dir in _subdirs(condition_dir):
                frame_paths = sorted(
                    (p for p in view_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES),
                    key=lambda p: (_frame_index(p), p.name),
                )
                if not frame_paths:
                    logger.warning(f"Skipping empty sequence directory: {view_dir}")
                    continue
                try:
                    frames = np.stack([_read_frame(p, height, width) for p in frame_paths])
                except (UnidentifiedImageError, OSError) as e:
                    logger.error(f"Rejected sequence {view_dir}: unreadable frame ({e})")
                    result.rejected.append((str(view_dir), str(e)))
                    continue
                result.sequences.append(
                    SilhouetteSequence(
                        frames=frames,
                        identity=identity,
                        domain_id=domain_id,
                        condition=condition,
                        view=_parse_view(view_dir.name),
                        sample_id=view_dir.relative_to(root).as_posix(),
                    )
                )
    logger.info(
        f"Ingested {len(result.sequences)} sequence(s) from {root}"
        f" ({len(result.rejected)} rejected)"
    )
    return result


def write_atomic(path: Path, data: bytes) -> None:
    """Write bytes to path via a temporary file and rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _write_sequence(root: Path, sequence: SilhouetteSequence) -> None:
    seq_dir = root / sequence.sample_id
    seq_dir.mkdir(parents=True, exist_ok=True)
    pixels = np.rint(sequence.frames * 255.0).astype(np.uint8)
    for t, frame in enumerate(pixels):
        Image.fromarray(frame).save(seq_dir / f"frame{t:04d}.png")


def export_directory(
    steps: Sequence[StepDataset],
    root: Path,
    *,
    seed: int | None = None,
    ids_per_domain: int | None = None,
    seqs_per_id: int | None = None,
) -> StreamManifest:
    """Write a stream in the ingest layout and its stream manifest."""
    written: set[str] = set()
    length = height = width = 0
    for step in steps:
        for sequence in step.train + step.gallery + step.probe:
            if sequence.sample_id in written:
                continue
            _write_sequence(root, sequence)
            written.add(sequence.sample_id)
            length = max(length, sequence.length)
            height, width = sequence.resolution

    manifest = StreamManifest(
        seed=seed,
        n_domains=len({step.domain_id for step in steps}),
        ids_per_domain=ids_per_domain,
        seqs_per_id=seqs_per_id,
        length=length,
        height=height,
        width=width,
        steps=[
            StepManifest(
                name=step.name,
                domain_id=step.domain_id,
                protocol=step.protocol,
                train=[s.sample_id for s in step.train],
                gallery=[s.sample_id for s in step.gallery],
                probe=[s.sample_id for s in step.probe],
                metadata=dict(step.metadata),
            )
            for step in steps
        ],
    )
    write_atomic(root / STREAM_MANIFEST, manifest.model_dump_json(indent=2).encode())
    logger.info(f"Exported {len(written)} sequence(s) across {len(steps)} step(s) to {root}")
    return manifest


def read_stream_manifest(root: Path) -> StreamManifest:
    path = root / STREAM_MANIFEST
    if not path.is_file():
        raise DataError(f"Stream manifest not found: {path}")
    return StreamManifest.model_validate_json(path.read_text())


def stream_digest(root: Path) -> str:
    """SHA-256 of the stream manifest, identifying a stream across runs."""
    path = root / STREAM_MANIFEST
    if not path.is_file():
        raise DataError(f"Stream manifest not found: {path}")
    return hashlib.sha256(path.read_bytes()).hexdigest()


def load_stream(root: Path) -> list[StepDataset]:
    """Rebuild the StepDataset list described by a stream manifest."""
    manifest = read_stream_manifest(root)
    ingested = ingest_directory(root, manifest.height, manifest.width)
    by_id = {seq.sample_id: seq for seq in ingested.sequences}

    def resolve(sample_ids: list[str], domain_id: int) -> tuple[SilhouetteSequence, ...]:
        missing = [sid for sid in sample_ids if sid not in by_id]
        if missing:
            raise DataError(f"Stream references {len(missing)} missing sequence(s), e.g. {missing[0]}")
        return tuple(dataclasses.replace(by_id[sid], domain_id=domain_id) for sid in sample_ids)

    return [
        StepDataset(
            name=step.name,
            train=resolve(step.train, step.domain_id),
            gallery=resolve(step.gallery, step.domain_id),
            probe=resolve(step.probe, step.domain_id),
            domain_id=step.domain_id,
            protocol=step.protocol,
            metadata=dict(step.metadata),
        )
        for step in manifest.steps
    ]
