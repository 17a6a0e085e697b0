"""Value types and similarity geometry shared by every other module."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

EPS_NORM = 1e-12


def derive_seed(root: int, name: str) -> int:
    """Seed for component ``name`` under root seed ``root``.

    First 8 bytes (little-endian) of BLAKE2b over ``"<root>/<name>"``; every
    random stream in a run derives from the root seed this way.
    """
    digest = hashlib.blake2b(f"{int(root)}/{name}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class DegenerateVectorError(ValueError):
    """Raised when a vector is too short to define a direction."""


class FrameRef(NamedTuple):
    video_id: int
    frame_index: int


@dataclass(frozen=True)
class VideoEntry:
    video_id: int
    length: int
    path: str = ""
    label: Optional[int] = None


@dataclass(frozen=True)
class DatasetIndex:
    """Global enumeration of videos and their frames.

    Video ids are contiguous from 0 and every video has at least two frames.
    """

    videos: tuple[VideoEntry, ...] = field(default_factory=tuple)
    root: str = ""

    def __post_init__(self):
        object.__setattr__(self, "videos", tuple(self.videos))
        for i, v in enumerate(self.videos):
            if v.video_id != i:
                raise ValueError(f"video ids must be contiguous from 0, got {v.video_id} at position {i}")
            if v.length < 2:
                raise ValueError(f"video {v.video_id} has {v.length} frames; at least 2 are required")

    def __len__(self):
        return len(self.videos)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([v.length for v in self.videos], dtype=np.int64)

    @property
    def labels(self) -> Optional[np.ndarray]:
        if any(v.label is None for v in self.videos):
            return None
        return np.array([v.label for v in self.videos], dtype=np.int64)

    @property
    def num_frames(self) -> int:
        return int(self.lengths.sum())

    def frame_offsets(self) -> np.ndarray:
        """Flat position of each video's first frame in a frame-major enumeration."""
        return np.concatenate([[0], np.cumsum(self.lengths)[:-1]]).astype(np.int64)

    def frame_refs(self) -> list[FrameRef]:
        return [FrameRef(v.video_id, t) for v in self.videos for t in range(v.length)]

    def subset(self, video_ids: Sequence[int]) -> "DatasetIndex":
        """Re-indexed view over a subset of videos; paths and labels are kept."""
        picked = [self.videos[i] for i in video_ids]
        return DatasetIndex(
            tuple(VideoEntry(j, v.length, v.path, v.label) for j, v in enumerate(picked)),
            root=self.root,
        )


class VideoSequence:
    """Ordered frames of one video as a (T, H, W, C) float array in [0, 1]."""

    def __init__(self, frames, label: Optional[int] = None):
        frames = np.asarray(frames)
        if frames.ndim != 4:
            raise ValueError(f"expected frames shaped (T, H, W, C), got {frames.shape}")
        if frames.shape[0] < 2:
            raise ValueError("a video needs at least 2 frames")
        self.frames = frames
        self.label = label

    def __len__(self):
        return self.frames.shape[0]

    def __getitem__(self, t):
        return self.frames[t]


def normalize(v, axis: int = -1) -> np.ndarray:
    """Scale ``v`` to unit L2 norm along ``axis``.

    Rows already within a few ulps of unit norm are returned untouched, which
    makes the operation exactly idempotent.
    """
    v = np.asarray(v)
    if not np.issubdtype(v.dtype, np.floating):
        v = v.astype(np.float64)
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(n <= EPS_NORM):
        raise DegenerateVectorError("cannot normalize a vector with norm <= 1e-12")
    tol = 8 * np.finfo(v.dtype).eps
    return np.where(np.abs(n - 1) <= tol, v, v / n)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= EPS_NORM or nb <= EPS_NORM:
        raise DegenerateVectorError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def enumerate_anchor_pairs(index: DatasetIndex, mode: str = "every-frame", rng_seed=None) -> list[tuple[FrameRef, FrameRef]]:
    """Anchor/positive pairs of temporally adjacent frames.

    ``every-frame`` pairs frame t with t+1 for t in [0, T-2] of every video.
    ``one-per-video`` draws a single anchor per video uniformly from the same
    range using ``rng_seed`` (an int or a ``numpy.random.Generator``).
    """
    pairs = []
    if mode == "every-frame":
        for v in index.videos:
            pairs.extend((FrameRef(v.video_id, t), FrameRef(v.video_id, t + 1)) for t in range(v.length - 1))
    elif mode == "one-per-video":
        rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
        for v in index.videos:
            t = int(rng.integers(0, v.length - 1))
            pairs.append((FrameRef(v.video_id, t), FrameRef(v.video_id, t + 1)))
    else:
        raise ValueError(f"unknown anchor mode {mode!r}")
    return pairs
