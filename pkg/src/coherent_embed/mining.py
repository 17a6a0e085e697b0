"""Annealed semi-hard negative mining.

A negative is admissible when its cosine similarity to the anchor is at most
the current radius ``r(t)``.  The radius rises from ``r0`` towards ``rE`` as
training progresses, so the hardest admissible negatives get harder over
time.  Among admissible negatives the most similar ones are taken; any
shortfall is filled by uniform sampling from the remaining candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .memory_bank import InsufficientNegativesError, MemoryBank


@dataclass
class MiningSchedule:
    r0: float = -1.0
    r_end: float = 1.0
    epochs: float = 9.0
    enabled: bool = True

    def __post_init__(self):
        if not -1.0 <= self.r0 <= self.r_end <= 1.0:
            raise ValueError("need -1 <= r0 <= r_end <= 1")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")

    def radius(self, t: float) -> float:
        return radius(self, t)


def radius(schedule: MiningSchedule, t: float) -> float:
    """``r0 + (rE - r0) * (1 - exp(-5 t / E))`` for ``t`` epochs elapsed."""
    if not 0.0 <= t <= schedule.epochs:
        raise ValueError(f"t={t} outside [0, {schedule.epochs}]")
    return schedule.r0 + (schedule.r_end - schedule.r0) * (1.0 - math.exp(-5.0 * t / schedule.epochs))


def select_negatives(bank: MemoryBank, anchor, anchor_video: int, n: int, r: float, rng: np.random.Generator) -> np.ndarray:
    """Keys of ``n`` negatives for ``anchor`` under similarity cap ``r``.

    Ties in similarity are broken by ascending key.
    """
    candidates = bank.eligible_keys(anchor_video)
    if candidates.size < n:
        raise InsufficientNegativesError(
            f"requested {n} negatives but only {candidates.size} entries lie outside video {anchor_video}")
    if n == 0:
        return np.empty(0, dtype=np.int64)
    anchor = np.asarray(anchor, dtype=np.float64)
    sims = bank.vectors[candidates].astype(np.float64) @ (anchor / np.linalg.norm(anchor))
    inside = sims <= r
    # candidates are ascending, so a stable sort on -sim keeps key order within ties
    mined = candidates[inside][np.argsort(-sims[inside], kind="stable")]
    if mined.size >= n:
        return mined[:n]
    rest = candidates[~inside]
    fill = rng.choice(rest, size=n - mined.size, replace=False)
    return np.concatenate([mined, fill])


def sample_within_video(bank: MemoryBank, video_id: int, exclude_frames, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform keys from one video's own frames, skipping ``exclude_frames``.

    Returns fewer than ``n`` keys when the video is too short.
    """
    keys = bank.video_keys(video_id)
    drop = {int(bank.offsets[video_id] + t) for t in exclude_frames}
    pool = np.array([k for k in keys if k not in drop], dtype=np.int64)
    if pool.size == 0:
        return pool
    return rng.choice(pool, size=min(n, pool.size), replace=False)
