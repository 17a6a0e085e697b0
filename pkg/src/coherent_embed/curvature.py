"""Curvature of embedded frame trajectories.

Total Absolute Curvature (TAC) sums the turning angles between consecutive
difference vectors of a trajectory; Maximum Absolute Curvature (MAC) takes
their maximum.  Straighter trajectories in embedding space mean more
temporally coherent embeddings.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

EPS_SEG = 1e-9


class ZeroSegmentWarning(UserWarning):
    pass


def turn_angles(points, eps_seg: float = EPS_SEG):
    """Turning angle at every interior point, plus a mask of skipped turns.

    A turn touching a segment shorter than ``eps_seg`` contributes 0 and is
    flagged in the mask.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError("a trajectory needs at least 3 points of equal dimension")
    d = np.diff(x, axis=0)
    n = np.linalg.norm(d, axis=1)
    skipped = (n[:-1] <= eps_seg) | (n[1:] <= eps_seg)
    u = d / np.where(n > eps_seg, n, 1.0)[:, None]
    # same angle as arccos of the clamped cosine, without its loss of precision near 0 and pi
    angles = 2.0 * np.arctan2(np.linalg.norm(u[1:] - u[:-1], axis=1), np.linalg.norm(u[1:] + u[:-1], axis=1))
    angles = np.where(skipped, 0.0, angles)
    if skipped.any():
        warnings.warn(f"{int(skipped.sum())} turn(s) skipped on zero-length segments", ZeroSegmentWarning, stacklevel=3)
    return angles, skipped


def tac(points, eps_seg: float = EPS_SEG) -> float:
    return float(turn_angles(points, eps_seg)[0].sum())


def mac(points, eps_seg: float = EPS_SEG) -> float:
    return float(turn_angles(points, eps_seg)[0].max())


@dataclass
class CoherencyReport:
    mean_tac: float
    mean_mac: float
    rows: list = field(default_factory=list)  # (video_id, T, TAC, MAC, skipped_turns)

    def write(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["video_id", "T", "TAC", "MAC"])
            for vid, T, t, m, _ in self.rows:
                w.writerow([vid, T, repr(t), repr(m)])


def read_coherency_table(path) -> list:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    return [(int(r[0]), int(r[1]), float(r[2]), float(r[3])) for r in rows[1:]]


def sample_videos_evenly(num_videos: int, sample_count: int, labels: Optional[Sequence[int]] = None, seed=0) -> list[int]:
    """Indices of up to ``sample_count`` videos spread evenly over classes.

    Classes are visited round-robin, each contributing its videos in a seeded
    random order, so per-class counts differ by at most one while a class
    still has unused videos.
    """
    rng = np.random.default_rng(seed)
    if labels is None:
        labels = np.zeros(num_videos, dtype=np.int64)
    labels = np.asarray(labels)
    queues = [list(rng.permutation(np.flatnonzero(labels == c))) for c in np.unique(labels)]
    picked = []
    while len(picked) < min(sample_count, num_videos):
        for q in queues:
            if q and len(picked) < sample_count:
                picked.append(int(q.pop(0)))
    return sorted(picked)


def coherency_report(encoder: Callable, videos: Sequence, sample_count: Optional[int] = None,
                     labels: Optional[Sequence[int]] = None, seed=0, video_ids: Optional[Sequence[int]] = None) -> CoherencyReport:
    """Mean TAC/MAC over a class-balanced sample of videos.

    ``encoder`` maps a (T, H, W, C) frame array to (T, D) embeddings.  Videos
    are weighted equally in the means.
    """
    if sample_count is None:
        sample_count = len(videos)
    if labels is None and all(getattr(v, "label", None) is not None for v in videos):
        labels = [v.label for v in videos]
    picked = sample_videos_evenly(len(videos), sample_count, labels, seed)
    rows = []
    for i in picked:
        frames = getattr(videos[i], "frames", videos[i])
        emb = np.asarray(encoder(frames))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ZeroSegmentWarning)
            angles, skipped = turn_angles(emb)
        vid = i if video_ids is None else video_ids[i]
        rows.append((vid, emb.shape[0], float(angles.sum()), float(angles.max()), int(skipped.sum())))
    return CoherencyReport(
        float(np.mean([r[2] for r in rows])),
        float(np.mean([r[3] for r in rows])),
        rows,
    )
