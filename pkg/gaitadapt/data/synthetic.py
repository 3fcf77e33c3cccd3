"""
Synthetic silhouette-sequence generation.

A 2D articulated walker (capsule limbs, elliptic head) is rasterized per frame and
then passed through a factorized domain transform: viewpoint foreshortening,
clothing dilation, pixel-flip noise, frame drops and a blanked occlusion band.
One stride (half of a gait cycle) maps the silhouette onto itself, so a clip with
cadence c repeats every FRAME_RATE / c frames.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, fields

import numpy as np

from gaitadapt.data.sequence import (
    GaitDataset,
    SilhouetteSequence,
    StepDataset,
    make_sample_id,
)
from gaitadapt.errors.exceptions import ValidationError
from gaitadapt.schemas.common import Condition, ProtocolTag

logger = logging.getLogger(__name__)

FRAME_RATE = 25.0

# Documented physical ranges of identity factors. Limb and body lengths are
# fractions of standing height; cadence is strides per second.
IDENTITY_RANGES: dict[str, tuple[float, float]] = {
    "thigh": (0.20, 0.28),
    "shin": (0.20, 0.28),
    "upper_arm": (0.14, 0.20),
    "forearm": (0.12, 0.18),
    "torso": (0.26, 0.34),
    "head": (0.10, 0.15),
    "cadence": (1.6, 2.4),
    "stride_amplitude": (0.25, 0.60),
    "phase_offset": (0.0, 2.0 * math.pi),
    # Standing height as a fraction of frame height
    "stature": (0.70, 0.96),
    # Limb and torso thickness multiplier
    "girth": (0.7, 1.8),
    # Forward torso lean, radians
    "lean": (0.0, 0.3),
    # Arm swing relative to leg swing
    "arm_swing": (0.2, 1.2),
}

# Specs drawn together differ by at least this fraction of some factor's range.
# Phase offset is excluded: a clip starts at a random phase anyway.
IDENTITY_SEPARATION = 0.25
MAX_IDENTITY_DRAWS = 10_000

VIEW_BUCKETS = tuple(range(0, 181, 18))
MAX_NOISE_RATE = 0.2
MAX_OCCLUSION_FRACTION = 0.4
SEQUENCE_CONDITIONS = (Condition.NM, Condition.BG, Condition.CL)


@dataclass(frozen=True)
class IdentitySpec:
    """Walker body and gait factors of one synthetic subject."""

    thigh: float
    shin: float
    upper_arm: float
    forearm: float
    torso: float
    head: float
    cadence: float
    stride_amplitude: float
    phase_offset: float
    stature: float = 0.92
    girth: float = 1.0
    lean: float = 0.0
    arm_swing: float = 0.8

    def validate(self) -> None:
        for name in ("thigh", "shin", "upper_arm", "forearm", "torso", "head", "stature", "girth"):
            if getattr(self, name) <= 0.0:
                raise ValidationError(f"degenerate identity spec: {name} must be positive")
        if self.cadence <= 0.0:
            raise ValidationError("degenerate identity spec: cadence must be positive")

    def factors(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)


def identity_distance(a: IdentitySpec, b: IdentitySpec) -> float:
    """Largest per-factor difference, as a fraction of that factor's range (phase ignored)."""
    names = [f.name for f in fields(IdentitySpec)]
    spans = np.array([hi - lo for lo, hi in (IDENTITY_RANGES[n] for n in names)])
    keep = np.array([n != "phase_offset" for n in names])
    diff = np.abs(a.factors() - b.factors()) / spans
    return float(np.max(diff[keep]))


def are_distinct(a: IdentitySpec, b: IdentitySpec) -> bool:
    return identity_distance(a, b) >= IDENTITY_SEPARATION


@dataclass(frozen=True)
class DomainSpec:
    """Acquisition conditions shared by every sequence of a domain."""

    view: int = 90
    noise_rate: float = 0.0
    occlusion_start: float = 0.0  # fraction of height
    occlusion_fraction: float = 0.0
    dilation: int = 0
    frame_drop: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.noise_rate <= MAX_NOISE_RATE:
            raise ValidationError(f"noise_rate must be in [0, {MAX_NOISE_RATE}]")
        if not 0.0 <= self.occlusion_fraction < MAX_OCCLUSION_FRACTION:
            raise ValidationError(f"occlusion must cover < {MAX_OCCLUSION_FRACTION:.0%} of height")
        if not 0.0 <= self.occlusion_start <= 1.0:
            raise ValidationError("occlusion_start must be a fraction of height")
        if self.dilation < 0:
            raise ValidationError("dilation must be non-negative")
        if not 0.0 <= self.frame_drop < 1.0:
            raise ValidationError("frame_drop must be in [0, 1)")

    def occluded_rows(self, height: int) -> range:
        start = int(round(self.occlusion_start * height))
        stop = min(height, start + int(round(self.occlusion_fraction * height)))
        return range(start, stop)


def generate_identity(rng: np.random.Generator) -> IdentitySpec:
    """Draw every identity factor uniformly from its documented range."""
    values = {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in IDENTITY_RANGES.items()}
    return IdentitySpec(**values)


def generate_distinct_identity(
    rng: np.random.Generator, taken: Sequence[IdentitySpec] = ()
) -> IdentitySpec:
    """Draw until the spec is distinct from every spec in `taken`."""
    for _ in range(MAX_IDENTITY_DRAWS):
        spec = generate_identity(rng)
        if all(are_distinct(spec, other) for other in taken):
            return spec
    raise ValidationError(
        f"no identity distinct from {len(taken)} others after {MAX_IDENTITY_DRAWS} draws"
    )


def generate_identities(rng: np.random.Generator, n: int) -> list[IdentitySpec]:
    """`n` pairwise distinct identities."""
    specs: list[IdentitySpec] = []
    for _ in range(n):
        specs.append(generate_distinct_identity(rng, specs))
    return specs


def generate_domain(rng: np.random.Generator, severity: float = 0.5) -> DomainSpec:
    """Draw a domain whose shift factors scale with severity in [0, 1]."""
    if not 0.0 <= severity <= 1.0:
        raise ValidationError("severity must be in [0, 1]")
    occlusion = float(rng.uniform(0.0, 0.25)) * severity
    return DomainSpec(
        view=int(rng.choice(VIEW_BUCKETS)),
        noise_rate=float(rng.uniform(0.0, 0.05)) * severity,
        occlusion_start=float(rng.uniform(0.0, 1.0 - occlusion)),
        occlusion_fraction=occlusion,
        dilation=int(rng.integers(0, 2)) if severity > 0 else 0,
        frame_drop=float(rng.uniform(0.0, 0.2)) * severity,
    )


def _stamp_capsule(
    mask: np.ndarray,
    yy: np.ndarray,
    xx: np.ndarray,
    p0: tuple[float, float],
    p1: tuple[float, float],
    radius: float,
) -> None:
    """Set every pixel within radius of segment p0-p1 (points are (y, x))."""
    y0, x0 = p0
    y1, x1 = p1
    dy, dx = y1 - y0, x1 - x0
    length_sq = dy * dy + dx * dx
    if length_sq == 0.0:
        t = np.zeros_like(yy)
    else:
        t = np.clip(((yy - y0) * dy + (xx - x0) * dx) / length_sq, 0.0, 1.0)
    dist_sq = (yy - (y0 + t * dy)) ** 2 + (xx - (x0 + t * dx)) ** 2
    mask |= dist_sq <= radius * radius


def _stamp_ellipse(
    mask: np.ndarray,
    yy: np.ndarray,
    xx: np.ndarray,
    center: tuple[float, float],
    ry: float,
    rx: float,
) -> None:
    cy, cx = center
    mask |= ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _render_pose(
    spec: IdentitySpec,
    domain: DomainSpec,
    condition: Condition,
    theta: float,
    amplitude: float,
    height: int,
    width: int,
) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    mask = np.zeros((height, width), dtype=bool)

    view = math.radians(domain.view)
    swing = max(0.2, abs(math.sin(view)))  # 90 degrees = side view, full swing
    frontal = math.cos(view) ** 2

    body = spec.head + spec.torso + spec.thigh + spec.shin
    scale = spec.stature * 0.96 * height / body
    thick = (1.0 + 0.6 * frontal) * spec.girth
    # Clothing thickens every part by a fixed share of the frame
    cloth = 0.015 * height if condition == Condition.CL else 0.0
    dilate = domain.dilation + cloth

    leg_r = 0.045 * height * thick / 2 + dilate
    arm_r = 0.035 * height * thick / 2 + dilate
    torso_r = 0.09 * height * thick / 2 * (1.3 if condition == Condition.CL else 1.0) + dilate

    # Feet rest near the bottom edge, so stature shows as head height
    bob = 0.02 * height * amplitude * abs(math.cos(theta))
    cx = width / 2.0
    hip_y = 0.98 * height - (spec.thigh + spec.shin) * scale + bob
    lean_dx = spec.torso * scale * math.sin(spec.lean) * swing
    lean_dy = spec.torso * scale * math.cos(spec.lean)
    shoulder = (hip_y - 0.92 * lean_dy, cx + 0.92 * lean_dx)
    neck = (hip_y - lean_dy, cx + lean_dx)

    _stamp_capsule(mask, yy, xx, (hip_y, cx), shoulder, torso_r)
    head_ry = spec.head * scale / 2
    _stamp_ellipse(
        mask,
        yy,
        xx,
        (neck[0] - head_ry, neck[1]),
        head_ry + dilate,
        head_ry * 0.8 * spec.girth + dilate,
    )

    for psi in (theta, theta + math.pi):
        hip_angle = amplitude * math.sin(psi)
        shin_angle = hip_angle - 0.7 * amplitude * max(0.0, math.cos(psi))
        knee = (
            hip_y + spec.thigh * scale * math.cos(hip_angle),
            cx + spec.thigh * scale * math.sin(hip_angle) * swing,
        )
        ankle = (
            knee[0] + spec.shin * scale * math.cos(shin_angle),
            knee[1] + spec.shin * scale * math.sin(shin_angle) * swing,
        )
        _stamp_capsule(mask, yy, xx, (hip_y, cx), knee, leg_r)
        _stamp_capsule(mask, yy, xx, knee, ankle, leg_r)

        arm_angle = -spec.arm_swing * amplitude * math.sin(psi)
        forearm_angle = arm_angle + 0.25 * amplitude * (1.0 + math.sin(psi))
        elbow = (
            shoulder[0] + spec.upper_arm * scale * math.cos(arm_angle),
            shoulder[1] + spec.upper_arm * scale * math.sin(arm_angle) * swing,
        )
        wrist = (
            elbow[0] + spec.forearm * scale * math.cos(forearm_angle),
            elbow[1] + spec.forearm * scale * math.sin(forearm_angle) * swing,
        )
        _stamp_capsule(mask, yy, xx, shoulder, elbow, arm_r)
        _stamp_capsule(mask, yy, xx, elbow, wrist, arm_r)

    if condition == Condition.BG:
        bag_r = 0.05 * height + dilate
        _stamp_ellipse(mask, yy, xx, (hip_y, cx + 0.12 * width * swing), bag_r, bag_r * 0.8)

    return mask


def render_sequence(
    spec: IdentitySpec,
    domain: DomainSpec,
    length: int,
    height: int,
    width: int,
    rng: np.random.Generator,
    *,
    condition: Condition = Condition.NM,
    identity: int = 0,
    domain_id: int = 0,
    sample_index: int = 0,
    jitter: bool = True,
) -> SilhouetteSequence:
    """
    Render a walking clip under a domain transform.

    With jitter enabled the clip starts at a random gait phase and the cadence
    and stride amplitude vary by a few percent, so sequences of one subject are
    not copies of each other.
    """
    if length < 1:
        raise ValidationError(f"sequence length must be >= 1, got {length}")
    spec.validate()

    start_phase = float(rng.uniform(0.0, 2.0 * math.pi)) if jitter else 0.0
    cadence = spec.cadence * (float(rng.uniform(0.97, 1.03)) if jitter else 1.0)
    amplitude = spec.stride_amplitude * (float(rng.uniform(0.95, 1.05)) if jitter else 1.0)

    frames = np.empty((length, height, width), dtype=np.float32)
    for t in range(length):
        theta = spec.phase_offset + start_phase + math.pi * cadence * t / FRAME_RATE
        frames[t] = _render_pose(spec, domain, condition, theta, amplitude, height, width)

    if domain.noise_rate > 0.0:
        flips = rng.random(frames.shape) < domain.noise_rate
        frames = np.where(flips, 1.0 - frames, frames).astype(np.float32)

    if domain.frame_drop > 0.0:
        for t in range(1, length):
            if rng.random() < domain.frame_drop:
                frames[t] = frames[t - 1]

    rows = domain.occluded_rows(height)
    if len(rows) > 0:
        frames[:, rows.start : rows.stop, :] = 0.0

    return SilhouetteSequence(
        frames=frames,
        identity=identity,
        domain_id=domain_id,
        condition=condition,
        view=domain.view,
        sample_id=make_sample_id(identity, condition, sample_index, domain.view),
    )


def _sequence_condition(identity: int, index: int) -> Condition:
    # Index 0 is always a normal walk (gallery); later ones rotate per subject.
    if index == 0:
        return Condition.NM
    return SEQUENCE_CONDITIONS[(index + identity) % len(SEQUENCE_CONDITIONS)]


def _render_identity(
    spec: IdentitySpec,
    domain: DomainSpec,
    identity: int,
    domain_id: int,
    seqs_per_id: int,
    stream_seed: int,
    length: int,
    height: int,
    width: int,
) -> list[SilhouetteSequence]:
    sequences: list[SilhouetteSequence] = []
    for k in range(seqs_per_id):
        seq_rng = np.random.default_rng([stream_seed, domain_id, identity, k])
        sequences.append(
            render_sequence(
                spec,
                domain,
                length,
                height,
                width,
                seq_rng,
                condition=_sequence_condition(identity, k),
                identity=identity,
                domain_id=domain_id,
                sample_index=k,
            )
        )
    return sequences


def generate_domain_stream(
    n_domains: int,
    ids_per_domain: int,
    seqs_per_id: int,
    rng: np.random.Generator,
    *,
    length: int = 30,
    height: int = 64,
    width: int = 44,
    severity: float = 0.5,
) -> list[StepDataset]:
    """
    Generate one cross-domain step per synthetic domain.

    Identity blocks are disjoint across domains. Per subject, sequence 0 goes to
    the gallery, the last sequence to the probe set and the rest to training.
    """
    if n_domains < 1:
        raise ValidationError("n_domains must be >= 1")
    if ids_per_domain < 1:
        raise ValidationError("ids_per_domain must be >= 1")
    if seqs_per_id < 3:
        raise ValidationError("seqs_per_id must be >= 3 to fill train, gallery and probe")

    stream_seed = int(rng.integers(0, 2**32))
    drawn: list[IdentitySpec] = []
    steps: list[StepDataset] = []
    for d in range(n_domains):
        domain = generate_domain(rng, severity)
        train: list[SilhouetteSequence] = []
        gallery: list[SilhouetteSequence] = []
        probe: list[SilhouetteSequence] = []
        for i in range(ids_per_domain):
            identity = d * ids_per_domain + i
            spec = generate_distinct_identity(rng, drawn)
            drawn.append(spec)
            sequences = _render_identity(
                spec, domain, identity, d, seqs_per_id, stream_seed, length, height, width
            )
            gallery.append(sequences[0])
            probe.append(sequences[-1])
            train.extend(sequences[1:-1])
        logger.debug(f"Generated domain {d}: {domain}")
        steps.append(
            StepDataset(
                name=f"domain-{d}",
                train=tuple(train),
                gallery=tuple(gallery),
                probe=tuple(probe),
                domain_id=d,
                protocol=ProtocolTag.CROSS_INDEPENDENT,
                metadata={k: str(v) for k, v in asdict(domain).items()},
            )
        )
    return steps


def generate_dataset(
    name: str,
    domain_id: int,
    n_train_ids: int,
    n_test_ids: int,
    seqs_per_id: int,
    rng: np.random.Generator,
    *,
    identity_offset: int = 0,
    length: int = 30,
    height: int = 64,
    width: int = 44,
    severity: float = 0.5,
) -> GaitDataset:
    """Generate a domain with separate train and test identity pools."""
    if seqs_per_id < 2:
        raise ValidationError("seqs_per_id must be >= 2 to fill gallery and probe")
    stream_seed = int(rng.integers(0, 2**32))
    domain = generate_domain(rng, severity)
    train: list[SilhouetteSequence] = []
    test: list[SilhouetteSequence] = []
    specs = generate_identities(rng, n_train_ids + n_test_ids)
    for i, spec in enumerate(specs):
        identity = identity_offset + i
        sequences = _render_identity(
            spec,
            domain,
            identity,
            domain_id,
            seqs_per_id,
            stream_seed,
            length,
            height,
            width,
        )
        (train if i < n_train_ids else test).extend(sequences)
    return GaitDataset(name=name, domain_id=domain_id, train=tuple(train), test=tuple(test))
