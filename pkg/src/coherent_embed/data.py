"""Frame-sequence datasets: synthetic generation, on-disk layout, augmentation.

On-disk layout::

    <root>/manifest.tsv              video_dir<TAB>label<TAB>num_frames, one header line
    <root>/<video_dir>/frame_00000.ppm
    ...

Frames are binary 8-bit PPM (P6) files and load as float32 arrays shaped
(H, W, 3) with values ``byte / 255``.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .core import DatasetIndex, VideoEntry, VideoSequence

MOTIONS = ("linear_drift", "circular_orbit", "oscillation", "spiral")
SHAPES = ("triangle", "ell", "tee")
# Largest center displacement between consecutive frames, as a fraction of the frame size.
MAX_STEP_FRACTION = 0.16


class DatasetError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    num_classes: int = 4
    videos_per_class: int = 10
    frames_per_video: int = 30
    image_size: int = 32
    channels: int = 3
    shape_kind: str = "triangle"
    noise_sigma: float = 0.02
    color_mode: str = "grey"
    orientation: str = "upright"
    trail: int = 6
    trail_spacing: float = 2.0
    trail_decay: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.num_classes <= len(MOTIONS):
            raise ValueError(f"num_classes must be in 1..{len(MOTIONS)}")
        if self.frames_per_video < 6:
            raise ValueError("frames_per_video must be at least 6")
        if self.image_size < 8:
            raise ValueError("image_size must be at least 8")
        if self.channels != 3:
            raise ValueError("only RGB frames are supported")
        if self.orientation not in ("heading", "upright"):
            raise ValueError("orientation must be 'heading' or 'upright'")
        if self.color_mode not in ("grey", "random"):
            raise ValueError("color_mode must be 'grey' or 'random'")
        if self.trail < 0 or self.trail_spacing <= 0 or not 0.0 < self.trail_decay < 1.0:
            raise ValueError("trail must be >= 0, trail_spacing > 0 and trail_decay in (0, 1)")
        if self.shape_kind != "random" and self.shape_kind not in SHAPES:
            raise ValueError(f"shape_kind must be 'random' or one of {SHAPES}")


@dataclass
class AugmentationConfig:
    enabled: bool = True
    crop_size: Optional[int] = None  # None keeps the frame size
    crop_padding: int = 4
    flip_prob: float = 0.5
    grey_prob: float = 0.2
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    jitter_prob: float = 0.8
    resize_short_side: Optional[int] = None

    def __post_init__(self):
        for name in ("flip_prob", "grey_prob", "jitter_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("brightness", "contrast", "saturation"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.crop_padding < 0:
            raise ValueError("crop_padding must be nonnegative")

    @classmethod
    def disabled(cls) -> "AugmentationConfig":
        return cls(enabled=False)


# -- synthetic videos -------------------------------------------------------

def trajectory(kind: str, T: int, size: int, rng: np.random.Generator):
    """Continuous-time center path ``f(t) -> (n, 2)`` in pixels, plus the motion parameters.

    The path is laid out so that frames ``0..T-1`` keep the shape inside the frame.
    """
    mid = size / 2.0
    margin = 0.16 * size
    if kind == "linear_drift":
        span = size - 2 * margin
        speed = rng.uniform(0.4, 0.75) * span / 22.0
        theta = rng.uniform(0, 2 * np.pi)
        v = speed * np.array([np.cos(theta), np.sin(theta)])
        travel = v * (T - 1)
        lo = margin - np.minimum(travel, 0)
        hi = size - margin - np.maximum(travel, 0)
        c0 = np.where(lo < hi, rng.uniform(np.minimum(lo, hi), np.maximum(lo, hi)), (lo + hi) / 2)
        return (lambda t: c0 + np.asarray(t, dtype=np.float64)[:, None] * v), {"velocity": v}
    if kind == "circular_orbit":
        center = mid + rng.uniform(-0.1, 0.1, 2) * size
        radius = rng.uniform(0.18, 0.3) * size
        omega = rng.choice([-1, 1]) * rng.uniform(0.12, 0.25)
        phase = rng.uniform(0, 2 * np.pi)

        def orbit(t):
            ang = phase + omega * np.asarray(t, dtype=np.float64)
            return center + radius * np.stack([np.cos(ang), np.sin(ang)], 1)
        return orbit, {"omega": omega}
    if kind == "oscillation":
        center = mid + rng.uniform(-0.15, 0.15, 2) * size
        amp = rng.uniform(0.12, 0.25) * size
        omega = rng.uniform(0.3, 0.55)
        theta = rng.uniform(0, np.pi)
        u = np.array([np.cos(theta), np.sin(theta)])
        phase = rng.uniform(0, 2 * np.pi)
        return (lambda t: center + amp * np.sin(omega * np.asarray(t, dtype=np.float64) + phase)[:, None] * u), {"omega": omega}
    if kind == "spiral":
        center = mid + rng.uniform(-0.05, 0.05, 2) * size
        r0, r1 = 0.03 * size, 0.33 * size
        omega = rng.choice([-1, 1]) * rng.uniform(0.3, 0.45)
        phase = rng.uniform(0, 2 * np.pi)

        def spiral(t):
            t = np.asarray(t, dtype=np.float64)
            r = np.maximum(r0 + (r1 - r0) * t / (T - 1), 0.0)
            ang = phase + omega * t
            return center + r[:, None] * np.stack([np.cos(ang), np.sin(ang)], 1)
        return spiral, {"omega": omega}
    raise ValueError(f"unknown motion {kind!r}")


def motion_path(kind: str, T: int, size: int, rng: np.random.Generator):
    """Shape centers (T, 2) as (x, y) in pixels plus the motion parameters."""
    path, params = trajectory(kind, T, size, rng)
    return path(np.arange(T)), params


def render_shape(size: int, center, kind: str, radius: float, color, background, angle: float = 0.0) -> np.ndarray:
    """Hard-edged shape over a flat background; pixel (i, j) is tested at its center.

    ``angle`` turns the shape counterclockwise (radians) about its center;
    every shape kind has a distinct orientation.
    """
    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = background
    img[shape_mask(size, center, kind, radius, angle)] = color
    return img


def shape_mask(size: int, center, kind: str, radius: float, angle: float = 0.0) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    dx, dy = xs - center[0], ys - center[1]
    # image y grows downwards, so a counterclockwise turn flips the sign of dy
    c, s = np.cos(angle), np.sin(angle)
    u = (c * dx - s * dy) / radius
    v = (s * dx + c * dy) / radius
    if kind == "triangle":
        mask = (u >= -1) & (u <= 1) & (np.abs(v) <= 0.45 * (1 - u))
    elif kind == "ell":
        mask = ((u >= -1) & (u <= 1) & (v >= -1) & (v <= -0.35)) | ((u >= -1) & (u <= -0.35) & (v >= -1) & (v <= 1))
    elif kind == "tee":
        mask = ((u >= 0.4) & (u <= 1) & (np.abs(v) <= 1)) | ((u >= -1) & (u <= 1) & (np.abs(v) <= 0.3))
    else:
        raise ValueError(f"unknown shape {kind!r}")
    return mask


def headings(path, t) -> np.ndarray:
    """Direction of travel of ``path`` at times ``t`` (radians, counterclockwise on screen)."""
    t = np.asarray(t, dtype=np.float64)
    d = path(t + 0.5) - path(t - 0.5)
    return np.arctan2(-d[:, 1], d[:, 0])


def synthesize_video(motion: str, spec: SyntheticSpec, rng: np.random.Generator):
    """Frames (T, H, W, 3) in [0, 1], quantized to 8 bits, and the centers used.

    Each frame also shows ``spec.trail`` fading afterimages of the shape at
    earlier times (spaced ``spec.trail_spacing`` frames apart), each dimmer
    by ``spec.trail_decay``, drawn oldest first.
    """
    size, T = spec.image_size, spec.frames_per_video
    kind = spec.shape_kind if spec.shape_kind != "random" else SHAPES[rng.integers(len(SHAPES))]
    radius = rng.uniform(0.09, 0.14) * size
    if spec.color_mode == "grey":
        color = np.full(3, rng.uniform(0.55, 1.0))
        background = np.full(3, rng.uniform(0.0, 0.15))
    else:
        color = rng.uniform(0.55, 1.0, 3)
        background = rng.uniform(0.0, 0.15, 3)
    path, _ = trajectory(motion, T, size, rng)
    frames = np.empty((T, size, size, 3))
    for t in range(T):
        # "heading" shapes face their direction of travel, "upright" ones point up
        ts = t - spec.trail_spacing * np.arange(spec.trail, -1, -1, dtype=np.float64)
        img = np.empty((size, size, 3))
        img[:] = background
        angles = headings(path, ts) if spec.orientation == "heading" else np.full(len(ts), np.pi / 2)
        for k, c, a in zip(range(spec.trail, -1, -1), path(ts), angles):
            mask = shape_mask(size, c, kind, radius, a)
            img[mask] = background + spec.trail_decay ** k * (color - background)
        frames[t] = img
    if spec.noise_sigma > 0:
        frames = frames + rng.normal(0.0, spec.noise_sigma, frames.shape)
    return quantize(frames), path(np.arange(T))


def generate_synthetic(spec: SyntheticSpec, output_path) -> DatasetIndex:
    """Render ``num_classes * videos_per_class`` videos under ``output_path``.

    Class ``c`` uses motion pattern ``MOTIONS[c]``; videos are numbered class-major.
    """
    root = Path(output_path)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    entries = []
    for label in range(spec.num_classes):
        for _ in range(spec.videos_per_class):
            vid = len(entries)
            frames, _ = synthesize_video(MOTIONS[label], spec, rng)
            name = f"video_{vid:05d}"
            write_video(root / name, frames)
            entries.append(VideoEntry(vid, len(frames), str(root / name), label))
    index = DatasetIndex(tuple(entries), root=str(root))
    write_manifest(index, root)
    return index


# -- disk I/O ---------------------------------------------------------------

def to_bytes(frames) -> np.ndarray:
    return np.round(np.clip(np.asarray(frames), 0.0, 1.0) * 255).astype(np.uint8)


def quantize(frames) -> np.ndarray:
    """Snap to the 8-bit grid exactly as a PPM round trip would."""
    return (to_bytes(frames) / np.float32(255)).astype(np.float32)


def write_ppm(path, frame) -> None:
    frame = np.asarray(frame)
    h, w, c = frame.shape
    if c != 3:
        raise ValueError("PPM frames must have 3 channels")
    data = to_bytes(frame)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())


def _ppm_tokens(buf: bytes, count: int):
    """First ``count`` whitespace-separated header tokens and the payload offset."""
    tokens, i = [], 0
    while len(tokens) < count:
        while i < len(buf) and buf[i:i + 1].isspace():
            i += 1
        if buf[i:i + 1] == b"#":
            while i < len(buf) and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j:j + 1].isspace():
            j += 1
        if j == i:
            raise DatasetError("truncated PPM header")
        tokens.append(buf[i:j])
        i = j
    return tokens, i + 1


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    try:
        tokens, offset = _ppm_tokens(buf, 4)
    except IndexError:
        raise DatasetError(f"{path}: truncated PPM header") from None
    if tokens[0] != b"P6":
        raise DatasetError(f"{path}: not a binary PPM (P6) file")
    w, h, maxval = (int(x) for x in tokens[1:])
    if maxval != 255:
        raise DatasetError(f"{path}: only 8-bit PPM is supported")
    payload = buf[offset:offset + w * h * 3]
    if len(payload) != w * h * 3:
        raise DatasetError(f"{path}: truncated pixel data")
    return (np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3) / np.float32(255)).astype(np.float32)


def write_video(directory, frames) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(frames):
        write_ppm(directory / f"frame_{t:05d}.ppm", frame)


def write_manifest(index: DatasetIndex, root) -> None:
    with open(Path(root) / "manifest.tsv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["video_dir", "label", "num_frames"])
        for v in index.videos:
            w.writerow([os.path.basename(v.path), "" if v.label is None else v.label, v.length])


def load_dataset(path) -> DatasetIndex:
    """Index a dataset directory; videos are ordered by directory name."""
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"{root} is not a directory")
    manifest = root / "manifest.tsv"
    info = {}
    if manifest.exists():
        with open(manifest, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh, delimiter="\t"))
        if not rows or rows[0] != ["video_dir", "label", "num_frames"]:
            raise DatasetError(f"{manifest}: expected header video_dir, label, num_frames")
        for lineno, row in enumerate(rows[1:], start=2):
            if len(row) != 3:
                raise DatasetError(f"{manifest}:{lineno}: expected 3 tab-separated fields")
            try:
                label = int(row[1]) if row[1] != "" else None
                info[row[0]] = (label, int(row[2]))
            except ValueError:
                raise DatasetError(f"{manifest}:{lineno}: label and num_frames must be integers") from None
        dirs = sorted(info)
    else:
        dirs = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not dirs:
        raise DatasetError(f"{root} contains no videos")
    entries = []
    shape = None
    for vid, name in enumerate(dirs):
        vdir = root / name
        if not vdir.is_dir():
            raise DatasetError(f"missing video directory {vdir}")
        files = sorted(vdir.glob("frame_*.ppm"))
        label, expected = info.get(name, (None, len(files)))
        if len(files) != expected:
            raise DatasetError(f"{vdir}: manifest lists {expected} frames, found {len(files)}")
        for t, f in enumerate(files):
            if f.name != f"frame_{t:05d}.ppm":
                raise DatasetError(f"{vdir}: missing frame_{t:05d}.ppm")
        if len(files) < 2:
            raise DatasetError(f"{vdir}: a video needs at least 2 frames, found {len(files)}")
        first = read_ppm(files[0]).shape
        if shape is None:
            shape = first
        elif first != shape:
            raise DatasetError(f"{vdir}: frame size {first} differs from {shape}")
        entries.append(VideoEntry(vid, len(files), str(vdir), label))
    return DatasetIndex(tuple(entries), root=str(root))


def load_video(index: DatasetIndex, video_id: int) -> VideoSequence:
    entry = index.videos[video_id]
    frames = [read_ppm(Path(entry.path) / f"frame_{t:05d}.ppm") for t in range(entry.length)]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise DatasetError(f"{entry.path}: inconsistent frame sizes {sorted(shapes)}")
    return VideoSequence(np.stack(frames), label=entry.label)


def load_all(index: DatasetIndex) -> list[VideoSequence]:
    return [load_video(index, v.video_id) for v in index.videos]


# -- augmentation -----------------------------------------------------------

def luminance(frame) -> np.ndarray:
    return frame[..., 0] * 0.299 + frame[..., 1] * 0.587 + frame[..., 2] * 0.114


def resize_short_side(frame, short_side: int) -> np.ndarray:
    h, w = frame.shape[:2]
    scale = short_side / min(h, w)
    if scale == 1.0:
        return frame
    return ndimage.zoom(frame, (scale, scale, 1), order=1)


def augment(frame, config: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """Random crop, horizontal flip, greyscale and colour jitter, in that order.

    Draws from ``rng`` in a fixed sequence regardless of which steps fire, so
    a given generator state always produces the same output.
    """
    frame = np.asarray(frame, dtype=np.float32)
    if not config.enabled:
        return frame
    if config.resize_short_side:
        frame = resize_short_side(frame, config.resize_short_side)
    h, w = frame.shape[:2]
    crop = config.crop_size or min(h, w)
    pad = config.crop_padding
    if crop > min(h, w) + 2 * pad:
        raise ValueError(f"crop size {crop} does not fit a {h}x{w} frame with padding {pad}")
    u = rng.random(8)
    if pad:
        frame = np.pad(frame, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    top = int(u[0] * (h + 2 * pad - crop + 1))
    left = int(u[1] * (w + 2 * pad - crop + 1))
    out = frame[top:top + crop, left:left + crop]
    if u[2] < config.flip_prob:
        out = out[:, ::-1]
    if u[3] < config.grey_prob:
        out = np.repeat(luminance(out)[..., None], 3, axis=2)
    if u[4] < config.jitter_prob:
        b = 1 + config.brightness * (2 * u[5] - 1)
        c = 1 + config.contrast * (2 * u[6] - 1)
        s = 1 + config.saturation * (2 * u[7] - 1)
        out = out * b
        out = (out - luminance(out).mean()) * c + luminance(out).mean()
        grey = luminance(out)[..., None]
        out = grey + (out - grey) * s
    return np.ascontiguousarray(np.clip(out, 0.0, 1.0), dtype=np.float32)


def rotate90(frame, k: int) -> np.ndarray:
    """Counterclockwise rotation by ``k * 90`` degrees of a square (H, W, C) frame."""
    frame = np.asarray(frame)
    if frame.shape[0] != frame.shape[1]:
        raise ValueError(f"rotation needs a square frame, got {frame.shape[:2]}")
    if not 0 <= int(k) < 4:
        raise ValueError("k must be in 0..3")
    return np.ascontiguousarray(np.rot90(frame, int(k), axes=(0, 1)))


def stack_of_differences(frames: Sequence) -> np.ndarray:
    """Five frame-to-frame differences of six RGB frames as a (15, H, W) array.

    Channel block ``j`` holds ``frames[j + 1] - frames[j]``.
    """
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[0] != 6 or frames.shape[-1] != 3:
        raise ValueError(f"expected 6 frames shaped (H, W, 3), got array of shape {frames.shape}")
    diffs = frames[1:] - frames[:-1]
    return np.ascontiguousarray(diffs.transpose(0, 3, 1, 2).reshape(15, *frames.shape[1:3]))


def to_chw(frames) -> np.ndarray:
    """(…, H, W, C) frames to (…, C, H, W) network inputs."""
    frames = np.asarray(frames)
    return np.ascontiguousarray(np.moveaxis(frames, -1, -3))
