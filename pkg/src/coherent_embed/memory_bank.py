"""Per-frame or per-video store of the most recent embeddings.

Losses and mining read negatives out of the bank instead of re-embedding
them.  Keys are flat integers: in per-frame mode the key of frame ``t`` of
video ``v`` is ``offsets[v] + t`` (so ascending key order is (video, frame)
order); in per-video mode the key is the video id.

Reads and writes for one training step follow a single-writer discipline:
inside ``with bank.step():`` every ``update`` is deferred, so all reads of
that step see the pre-step snapshot.  The deferred writes are applied in
call order when the block exits.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .core import DatasetIndex, FrameRef, normalize


class InsufficientNegativesError(ValueError):
    pass


class MemoryBank:
    def __init__(self, index: DatasetIndex, vectors: np.ndarray, mode: str = "per-frame", update_rate: float = 1.0):
        if mode not in ("per-frame", "per-video"):
            raise ValueError(f"unknown bank mode {mode!r}")
        if not 0.0 < update_rate <= 1.0:
            raise ValueError("update_rate must lie in (0, 1]")
        expected = index.num_frames if mode == "per-frame" else len(index)
        if vectors.shape[0] != expected:
            raise ValueError(f"{mode} bank over this index needs {expected} entries, got {vectors.shape[0]}")
        self.index = index
        self.mode = mode
        self.update_rate = update_rate
        self.vectors = vectors
        self.offsets = index.frame_offsets()
        if mode == "per-frame":
            self.key_video = np.repeat(np.arange(len(index)), index.lengths)
        else:
            self.key_video = np.arange(len(index))
        self._pending = None

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def key(self, ref) -> int:
        """Flat key for a ``FrameRef`` (per-frame) or a video id (per-video)."""
        if isinstance(ref, FrameRef):
            if self.mode == "per-video":
                return int(ref.video_id)
            if not 0 <= ref.frame_index < self.index.videos[ref.video_id].length:
                raise KeyError(ref)
            return int(self.offsets[ref.video_id] + ref.frame_index)
        k = int(ref)
        if not 0 <= k < len(self):
            raise KeyError(ref)
        return k

    def video_keys(self, video_id: int) -> np.ndarray:
        if self.mode == "per-video":
            return np.array([video_id])
        start = self.offsets[video_id]
        return np.arange(start, start + self.index.videos[video_id].length)

    def get(self, keys) -> np.ndarray:
        return self.vectors[np.asarray(keys, dtype=np.int64)]

    def update(self, key, new_embedding) -> np.ndarray:
        """Blend ``new_embedding`` into the entry at ``key`` and return the stored row.

        With ``update_rate == 1`` the entry is replaced outright.  Inside a
        ``step()`` block the write is deferred and the row returned is the
        value that will be stored at commit.
        """
        k = self.key(key)
        new = np.asarray(new_embedding, dtype=self.vectors.dtype)
        if new.shape != (self.dim,):
            raise ValueError(f"expected an embedding of shape ({self.dim},), got {new.shape}")
        if self.update_rate == 1.0:
            row = new.copy()
        else:
            lam = self.update_rate
            row = normalize((1 - lam) * self.vectors[k].astype(np.float64) + lam * new.astype(np.float64))
            row = row.astype(self.vectors.dtype)
        if self._pending is not None:
            self._pending.append((k, row))
        else:
            self.vectors[k] = row
        return row

    def update_many(self, keys, embeddings) -> None:
        for k, e in zip(keys, embeddings):
            self.update(k, e)

    @contextmanager
    def step(self):
        if self._pending is not None:
            raise RuntimeError("bank steps cannot be nested")
        self._pending = []
        try:
            yield self
        finally:
            pending, self._pending = self._pending, None
        # Blends must see the snapshot value, so they were computed at call
        # time; later writes to a key in the same step win.
        for k, row in pending:
            self.vectors[k] = row

    def eligible_keys(self, exclude_video: int) -> np.ndarray:
        return np.flatnonzero(self.key_video != exclude_video)

    def sample_uniform_negatives(self, exclude_video: int, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` keys drawn without replacement from videos other than ``exclude_video``."""
        if n < 0:
            raise ValueError("n must be nonnegative")
        pool = self.eligible_keys(exclude_video)
        if pool.size < n:
            raise InsufficientNegativesError(f"requested {n} negatives but only {pool.size} entries lie outside video {exclude_video}")
        if n == 0:
            return np.empty(0, dtype=np.int64)
        return rng.choice(pool, size=n, replace=False)


def init_bank(index: DatasetIndex, dim: int = 128, mode: str = "per-frame", seed=0, update_rate: float = 1.0, dtype=np.float32) -> MemoryBank:
    """Bank of independent random unit vectors (normalized Gaussian draws)."""
    if dim < 2:
        raise ValueError("embedding dimension must be at least 2")
    n = index.num_frames if mode == "per-frame" else len(index)
    rng = np.random.default_rng(seed)
    vectors = normalize(rng.standard_normal((n, dim))).astype(dtype)
    return MemoryBank(index, vectors, mode=mode, update_rate=update_rate)
