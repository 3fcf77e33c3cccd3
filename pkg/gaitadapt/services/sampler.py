"""P x K identity-balanced batch sampling."""

from __future__ import annotations

import logging
from collections import defaultdict
from collections.abc import Sequence

import numpy as np

from gaitadapt.data.sequence import SilhouetteSequence
from gaitadapt.errors.exceptions import DataError, ValidationError

logger = logging.getLogger(__name__)

MIN_IDENTITIES = 2


def group_by_identity(
    sequences: Sequence[SilhouetteSequence],
) -> dict[int, list[SilhouetteSequence]]:
    groups: dict[int, list[SilhouetteSequence]] = defaultdict(list)
    for seq in sequences:
        groups[seq.identity].append(seq)
    return dict(sorted(groups.items()))


def effective_identities(available: int, requested: int) -> int:
    """How many identities a batch can hold; never fewer than two."""
    if available < MIN_IDENTITIES:
        raise DataError(
            f"training set has {available} identities, at least {MIN_IDENTITIES} are needed"
        )
    return min(requested, available)


def sample_batch(
    train: Sequence[SilhouetteSequence],
    identities_per_batch: int,
    samples_per_identity: int,
    rng: np.random.Generator,
) -> list[SilhouetteSequence]:
    """
    Draw P distinct identities and K sequences of each, in shuffled order.

    Identities with fewer than K sequences are drawn with replacement.
    """
    if identities_per_batch < 1 or samples_per_identity < 1:
        raise ValidationError("P and K must both be positive")
    if not train:
        raise DataError("cannot sample from an empty training set")

    groups = group_by_identity(train)
    p = effective_identities(len(groups), identities_per_batch)
    if p < identities_per_batch:
        logger.debug(
            f"Only {len(groups)} identities available, reducing P from {identities_per_batch} to {p}"
        )

    identities = list(groups)
    chosen = rng.choice(len(identities), size=p, replace=False)
    batch: list[SilhouetteSequence] = []
    for index in chosen:
        pool = groups[identities[int(index)]]
        picks = rng.choice(len(pool), size=samples_per_identity, replace=len(pool) < samples_per_identity)
        batch.extend(pool[int(i)] for i in picks)

    order = rng.permutation(len(batch))
    return [batch[int(i)] for i in order]
