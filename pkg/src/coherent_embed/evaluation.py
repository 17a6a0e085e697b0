"""Downstream classification: linear probe / fine-tuning and video-level inference.

Training draws one input per third of each video and averages the three
outputs; inference averages the softmax over evenly spaced samples.  In
stack-of-differences mode each input is the 15-channel difference stack of
a 6-frame block, and the first convolution of the RGB encoder is inflated
to 15 input channels.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from .checkpoint import Checkpoint, write_tensor
from .core import derive_seed
from .data import AugmentationConfig, augment, stack_of_differences, to_chw
from .encoder import SGD, Encoder, EncoderConfig

BLOCK = 6


class DatasetError(ValueError):
    pass


@dataclass
class EvalConfig:
    mode: str = "linear-probe"
    input_mode: str = "rgb"
    epochs: int = 30
    lr: float = 0.05
    lr_decay_epoch: int = 375
    lr_decay_factor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 8
    dropout: float = 0.0
    samples: int = 19
    augment: bool = True
    inflate: bool = True
    holdout_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("linear-probe", "fine-tune"):
            raise ValueError(f"unknown eval mode {self.mode!r}")
        if self.input_mode not in ("rgb", "stack"):
            raise ValueError(f"unknown input mode {self.input_mode!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.samples < 1:
            raise ValueError("samples must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


class Classifier:
    """Encoder trunk plus a fresh linear head on the pooled features."""

    def __init__(self, encoder: Encoder, head_weight, head_bias, mode: str = "linear-probe", input_mode: str = "rgb"):
        self.encoder = encoder
        self.params = encoder.params
        self.params["head.weight"] = head_weight
        self.params["head.bias"] = head_bias
        self.mode = mode
        self.input_mode = input_mode

    @property
    def num_classes(self) -> int:
        return self.params["head.weight"].shape[0]

    @property
    def trainable(self) -> list:
        if self.mode == "linear-probe":
            return ["head.weight", "head.bias"]
        return [k for k in self.encoder.trainable if k.startswith(("conv", "bn", "head"))]

    def copy(self) -> "Classifier":
        enc = Encoder(self.encoder.config, {k: v.copy() for k, v in self.params.items()})
        return Classifier(enc, enc.params["head.weight"], enc.params["head.bias"], self.mode, self.input_mode)

    def logits(self, x) -> np.ndarray:
        pooled = self.encoder.features(x)
        return pooled @ self.params["head.weight"].T + self.params["head.bias"]


def classifier_checkpoint(classifier: Classifier, config: EvalConfig, extra_meta: Optional[dict] = None) -> Checkpoint:
    enc = classifier.encoder
    meta = {
        "kind": "classifier",
        "mode": classifier.mode,
        "input_mode": classifier.input_mode,
        "config": {"encoder": dataclasses.asdict(enc.config), "eval": dataclasses.asdict(config)},
    }
    meta.update(extra_meta or {})
    return Checkpoint({f"encoder/{k}": v for k, v in classifier.params.items()}, meta)


def classifier_from_checkpoint(ckpt: Checkpoint) -> Classifier:
    if ckpt.meta.get("kind") != "classifier":
        raise ValueError(f"expected a classifier checkpoint, got kind {ckpt.meta.get('kind')!r}")
    params = {k: v.copy() for k, v in ckpt.group("encoder").items()}
    w, b = params.pop("head.weight"), params.pop("head.bias")
    enc = Encoder(EncoderConfig(**ckpt.meta["config"]["encoder"]), params)
    return Classifier(enc, w, b, ckpt.meta["mode"], ckpt.meta["input_mode"])


def inflate_first_layer(weight: np.ndarray, blocks: int = 5) -> np.ndarray:
    """Tile RGB kernels across ``blocks`` difference blocks, scaled by 1/blocks."""
    return (np.tile(weight, (1, blocks, 1, 1)) / blocks).astype(weight.dtype)


def build_classifier(checkpoint: Checkpoint, num_classes: int, config: EvalConfig) -> Classifier:
    if num_classes < 2:
        raise ValueError("a classifier needs at least 2 classes")
    meta_cfg = dict(checkpoint.meta["config"]["encoder"])
    params = {k: v.copy() for k, v in checkpoint.group("encoder").items() if not k.startswith(("proj.", "rot.", "embed_bn."))}
    want = 15 if config.input_mode == "stack" else 3
    if meta_cfg["in_channels"] != want:
        if not (config.inflate and meta_cfg["in_channels"] == 3 and want == 15):
            raise ValueError(f"checkpoint encoder takes {meta_cfg['in_channels']} channels, input mode needs {want}")
        params["conv0.weight"] = inflate_first_layer(params["conv0.weight"])
    meta_cfg["in_channels"] = want
    meta_cfg["rotation_head"] = False
    meta_cfg["embed_norm"] = False
    enc = Encoder(EncoderConfig(**meta_cfg), params)
    rng = np.random.default_rng(derive_seed(config.seed, "head"))
    feat = enc.feature_dim
    dtype = params["conv0.weight"].dtype
    w = rng.normal(0, np.sqrt(1.0 / feat), (num_classes, feat)).astype(dtype)
    b = np.zeros(num_classes, dtype=dtype)
    return Classifier(enc, w, b, config.mode, config.input_mode)


def segment_indices(T: int, rng: np.random.Generator, input_mode: str = "rgb", segments: int = 3) -> list[int]:
    """One random start index per equal portion of the video."""
    usable = T - BLOCK + 1 if input_mode == "stack" else T
    if usable < 1:
        raise DatasetError(f"video of {T} frames is too short for {input_mode} inputs")
    edges = np.linspace(0, usable, segments + 1)
    out = []
    for i in range(segments):
        lo, hi = int(edges[i]), max(int(edges[i + 1]), int(edges[i]) + 1)
        out.append(int(rng.integers(lo, min(hi, usable))))
    return out


def sample_indices(T: int, samples: int = 19) -> list[int]:
    """``floor(i * (T - 1) / (S - 1))`` for i = 0..S-1; repeats indices when T < S."""
    if samples == 1:
        return [0]
    return [min(i * (T - 1) // (samples - 1), T - 1) for i in range(samples)]


def make_input(frames, start: int, input_mode: str, aug: Optional[AugmentationConfig] = None, seed=None) -> np.ndarray:
    """(C, H, W) network input anchored at ``start``."""
    if input_mode == "stack":
        T = len(frames)
        if T < BLOCK:
            raise ValueError(f"stack-of-differences needs at least {BLOCK} frames, video has {T}")
        s = min(start, T - BLOCK)
        block = frames[s:s + BLOCK]
        if aug is not None:
            # the same seed gives every frame of the block the same crop, flip and jitter
            block = [augment(f, aug, np.random.default_rng(seed)) for f in block]
        return stack_of_differences(block)
    frame = frames[start]
    if aug is not None:
        frame = augment(frame, aug, np.random.default_rng(seed))
    return to_chw(frame)


def evaluate_video(classifier: Classifier, video, config: EvalConfig):
    """Predicted class and the softmax averaged over ``config.samples`` inputs.

    Ties in the averaged distribution go to the lowest class id.
    """
    frames = getattr(video, "frames", video)
    T = len(frames)
    if config.input_mode == "stack" and T < BLOCK:
        raise ValueError(f"stack-of-differences needs at least {BLOCK} frames, video has {T}")
    X = np.stack([make_input(frames, i, config.input_mode) for i in sample_indices(T, config.samples)])
    probs = softmax(classifier.logits(X).astype(np.float64), axis=1).mean(axis=0)
    return int(np.argmax(probs)), probs


def top1(classifier: Classifier, videos: Sequence, labels: Sequence[int], config: EvalConfig) -> float:
    if not len(videos):
        return float("nan")
    hits = sum(evaluate_video(classifier, v, config)[0] == int(y) for v, y in zip(videos, labels))
    return hits / len(videos)


@dataclass
class FinetuneResult:
    classifier: Classifier
    best_top1: float
    best_epoch: int
    history: list = field(default_factory=list)  # (epoch, train_loss, holdout_top1)


def finetune(classifier: Classifier, videos: Sequence, labels: Sequence[int], config: EvalConfig,
             train_ids: Sequence[int], holdout_ids: Sequence[int],
             augment_config: Optional[AugmentationConfig] = None) -> FinetuneResult:
    """Train ``classifier`` on ``train_ids`` and keep the epoch with the best held-out top-1.

    ``classifier`` is updated in place; the returned classifier is a copy at the best epoch.
    """
    labels = np.asarray(labels, dtype=np.int64)
    C = classifier.num_classes
    for c in range(C):
        if not np.any(labels[list(train_ids)] == c):
            raise DatasetError(f"class {c} has no training videos")
    aug = (augment_config or AugmentationConfig()) if config.augment else None
    rng = np.random.default_rng(derive_seed(config.seed, "finetune"))
    opt = SGD({k: classifier.params[k] for k in classifier.trainable}, config.lr, config.momentum, config.weight_decay)
    enc = classifier.encoder
    W, b = classifier.params["head.weight"], classifier.params["head.bias"]
    best = (-1.0, 0, classifier.copy())
    history = []
    eval_videos = [videos[i] for i in holdout_ids]
    eval_labels = labels[list(holdout_ids)]
    for epoch in range(config.epochs):
        opt.lr = config.lr / config.lr_decay_factor if epoch >= config.lr_decay_epoch else config.lr
        order = rng.permutation(np.asarray(train_ids))
        total = 0.0
        for s in range(0, len(order), config.batch_size):
            batch = order[s:s + config.batch_size]
            xs = []
            for vid in batch:
                frames = getattr(videos[vid], "frames", videos[vid])
                for start in segment_indices(len(frames), rng, config.input_mode):
                    xs.append(make_input(frames, start, config.input_mode, aug, rng.integers(2**63)))
            pooled, cache = enc.trunk(np.stack(xs), train=classifier.mode == "fine-tune")
            n = len(batch)
            if config.dropout > 0:
                keep = (rng.random(pooled.shape) >= config.dropout) / (1 - config.dropout)
                pooled_d = pooled * keep.astype(pooled.dtype)
            else:
                keep, pooled_d = None, pooled
            out = (pooled_d @ W.T + b).reshape(n, 3, C).mean(axis=1).astype(np.float64)
            y = labels[batch]
            logp = log_softmax(out, axis=1)
            total += -logp[np.arange(n), y].sum()
            d_out = softmax(out, axis=1)
            d_out[np.arange(n), y] -= 1.0
            d_out /= n
            d_each = np.repeat(d_out / 3, 3, axis=0).astype(pooled.dtype)
            grads = {"head.weight": d_each.T @ pooled_d, "head.bias": d_each.sum(axis=0)}
            if classifier.mode == "fine-tune":
                dp = d_each @ W
                if keep is not None:
                    dp = dp * keep
                enc.trunk_backward(cache, dp, grads)
            opt.step(grads)
        acc = top1(classifier, eval_videos, eval_labels, config)
        history.append((epoch + 1, total / len(order), acc))
        if acc > best[0]:
            best = (acc, epoch + 1, classifier.copy())
    return FinetuneResult(best[2], best[0], best[1], history)


def export_embeddings(checkpoint: Checkpoint, video, out_path) -> tuple[Path, Path]:
    """Write per-frame embeddings as TSV (frame_index, values...) and a TCEB twin at ``out_path + '.tceb'``."""
    from .trainer import encoder_from_checkpoint

    encoder = encoder_from_checkpoint(checkpoint)
    frames = getattr(video, "frames", video)
    emb = encoder.encode(to_chw(np.asarray(frames))).astype(np.float32)
    out_path = Path(out_path)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        for t, row in enumerate(emb):
            w.writerow([t] + [format(float(x), ".9g") for x in row])
    bin_path = out_path.with_name(out_path.name + ".tceb")
    write_tensor(bin_path, emb)
    return out_path, bin_path


def read_embedding_table(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh, delimiter="\t")]
    return np.array([[float(x) for x in r[1:]] for r in rows])
