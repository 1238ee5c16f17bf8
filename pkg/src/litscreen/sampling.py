"""Seeded class-rebalancing for training pools.

Down-sampling draws without replacement.  Up-sampling duplicates items as
evenly as possible: every original appears either ``floor(target/n)`` or
``ceil(target/n)`` times, with the remainder spread by a seeded shuffle.
The combined sample is returned in a seeded shuffled order, so downstream
mini-batch training never sees the classes blocked together.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, TypeVar

import numpy as np

__all__ = ["SamplingPlan", "resample", "balanced_stage_sample"]

T = TypeVar("T")


@dataclass(frozen=True)
class SamplingPlan:
    """Target counts per class for one training pool."""

    pos_target: int
    neg_target: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.pos_target < 1 or self.neg_target < 1:
            raise ValueError(
                f"sampling targets must be >= 1, got pos={self.pos_target} "
                f"neg={self.neg_target}"
            )


def _even_duplication(n: int, target: int, rng: np.random.Generator) -> np.ndarray:
    """Indices 0..n-1 repeated to exactly ``target`` picks, multiplicities
    floor(target/n) or ceil(target/n); which items get the extra copy is
    decided by a seeded shuffle.  With target <= n this degenerates to a
    uniform draw without replacement."""
    base, extra = divmod(target, n)
    counts = np.full(n, base, dtype=np.int64)
    if extra:
        counts[rng.permutation(n)[:extra]] += 1
    return np.repeat(np.arange(n), counts)


def resample(
    positives: Sequence[T], negatives: Sequence[T], plan: SamplingPlan
) -> list[tuple[T, int]]:
    """Draw ``plan.pos_target`` positives and ``plan.neg_target`` negatives.

    Positives are duplicated evenly when the target exceeds the pool;
    negatives are down-sampled without replacement when the target is within
    the pool and duplicated evenly otherwise.  Returns ``(item, label)``
    pairs in seeded shuffled order.  Deterministic in ``plan.seed``.
    """
    if not positives or not negatives:
        raise ValueError("resample requires non-empty positive and negative pools")
    rng = np.random.default_rng(plan.seed)
    pos_idx = _even_duplication(len(positives), plan.pos_target, rng)
    if plan.neg_target <= len(negatives):
        neg_idx = rng.choice(len(negatives), size=plan.neg_target, replace=False)
    else:
        neg_idx = _even_duplication(len(negatives), plan.neg_target, rng)
    pairs = [(positives[i], 1) for i in pos_idx]
    pairs += [(negatives[i], 0) for i in neg_idx]
    order = rng.permutation(len(pairs))
    return [pairs[i] for i in order]


def balanced_stage_sample(
    items: Sequence[T], labels: Sequence, seed: int = 0
) -> list[tuple[T, int]]:
    """Balance one stage's pool 1:1 by down-sampling the majority label.

    The minority class is kept whole.  Raises ``ValueError`` when a label is
    missing entirely, since no classifier can be trained on one class here.
    """
    if len(items) != len(labels):
        raise ValueError("items and labels must have equal length")
    flags = np.asarray([bool(l) for l in labels])
    pos = [items[i] for i in np.flatnonzero(flags)]
    neg = [items[i] for i in np.flatnonzero(~flags)]
    if not pos or not neg:
        raise ValueError(
            f"stage pool needs both labels: {len(pos)} positive, {len(neg)} negative"
        )
    m = min(len(pos), len(neg))
    return resample(pos, neg, SamplingPlan(pos_target=m, neg_target=m, seed=seed))
