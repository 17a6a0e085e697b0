"""Self-supervised pretraining with a memory bank and the mining curriculum.

One training step:

1. augment the anchor frame, its successor and (for the second-order term)
   the frame after that, each with an independent draw; rotate a second
   copy of the augmented anchor for the auxiliary task;
2. embed all views in one batch;
3. fetch first-order negatives from the bank (mined under ``r(t)`` or
   uniform) and within-video negatives for the second-order term;
4. combine the losses, back-propagate, take an SGD step;
5. write the anchor embeddings into the bank.

Steps 2-4 read the bank snapshot; the writes of step 5 are deferred until
the step finishes (see ``MemoryBank.step``).

Augmentation draws come from ``default_rng([augment_seed, epoch, video,
frame, view])``, so results do not depend on worker count or order.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .core import DatasetIndex, VideoEntry, derive_seed, enumerate_anchor_pairs
from .curvature import CoherencyReport, coherency_report
from .data import AugmentationConfig, augment, load_all, rotate90, to_chw
from .encoder import SGD, Encoder, EncoderConfig
from .losses import (DegenerateSegmentError, LossConfig, combined_loss, estimate_partition, first_order_loss,
                     nce_loss, rotation_aux_loss, second_order_loss)
from .memory_bank import MemoryBank, init_bank
from .mining import MiningSchedule, radius, sample_within_video, select_negatives

METRICS_HEADER = ["epoch", "mean_loss", "lr", "r_t", "mean_TAC", "mean_MAC"]


class ConfigurationError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 100
    epochs: int = 9
    lr_decay_epoch: int = 5
    lr_decay_factor: float = 10.0
    anchor_mode: str = "every-frame"
    bank_mode: str = "per-frame"
    bank_update_rate: float = 1.0
    holdout_fraction: float = 0.2
    coherency_videos: int = 375
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not 0 <= self.lr_decay_epoch < self.epochs:
            raise ValueError("lr_decay_epoch must lie in [0, epochs)")
        if self.anchor_mode not in ("every-frame", "one-per-video"):
            raise ValueError(f"unknown anchor_mode {self.anchor_mode!r}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in [0, 1)")


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Learning rate used during 0-based ``epoch``."""
    if epoch >= config.lr_decay_epoch:
        return config.lr / config.lr_decay_factor
    return config.lr


def split_videos(index: DatasetIndex, holdout_fraction: float, seed) -> tuple[list[int], list[int]]:
    """Seeded train/held-out split by video, stratified by label when labels exist."""
    rng = np.random.default_rng(seed)
    labels = index.labels if index.labels is not None else np.zeros(len(index), dtype=np.int64)
    train, held = [], []
    for c in np.unique(labels):
        ids = rng.permutation(np.flatnonzero(labels == c))
        n_held = int(round(holdout_fraction * len(ids)))
        held.extend(int(i) for i in ids[:n_held])
        train.extend(int(i) for i in ids[n_held:])
    return sorted(train), sorted(held)


def augment_views(frames_by_job, seeds, config: AugmentationConfig, workers: int = 1):
    """Augment each frame with its own seeded generator, optionally in a thread pool."""
    def one(job):
        frame, seed = job
        return augment(frame, config, np.random.default_rng(seed))
    jobs = list(zip(frames_by_job, seeds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, jobs))
    return [one(j) for j in jobs]


def encoder_to_arrays(encoder: Encoder) -> dict:
    return {f"encoder/{k}": v for k, v in encoder.params.items()}


def encoder_from_checkpoint(ckpt: Checkpoint) -> Encoder:
    cfg = EncoderConfig(**ckpt.meta["config"]["encoder"])
    params = {k: v.copy() for k, v in ckpt.group("encoder").items()}
    return Encoder(cfg, params)


def index_to_meta(index: DatasetIndex) -> dict:
    return {"root": index.root, "videos": [[v.length, v.path, v.label] for v in index.videos]}


def index_from_meta(meta: dict) -> DatasetIndex:
    return DatasetIndex(tuple(VideoEntry(i, n, p, lab) for i, (n, p, lab) in enumerate(meta["videos"])), root=meta["root"])


@dataclass
class PretrainResult:
    checkpoint: Checkpoint
    metrics: list
    initial_coherency: Optional[CoherencyReport]
    encoder: Encoder
    train_ids: list = field(default_factory=list)
    holdout_ids: list = field(default_factory=list)


class Pretrainer:
    """Owns the encoder, optimizer and bank; one logical training thread."""

    def __init__(self, index: DatasetIndex, videos, encoder_config: EncoderConfig, train_config: TrainConfig,
                 loss_config: Optional[LossConfig] = None, mining: Optional[MiningSchedule] = None,
                 augment_config: Optional[AugmentationConfig] = None, hooks: Optional[list] = None):
        self.index = index
        self.frames = [getattr(v, "frames", v) for v in videos]
        self.encoder_config = encoder_config
        self.cfg = train_config
        self.loss_cfg = loss_config or LossConfig()
        mining = mining or MiningSchedule()
        self.mining = dataclasses.replace(mining, epochs=float(train_config.epochs))
        self.aug = augment_config or AugmentationConfig()
        self.hooks = hooks or []
        seed = train_config.seed
        self.encoder = Encoder.init(encoder_config, seed=derive_seed(seed, "encoder"))
        self.optimizer = SGD({k: self.encoder.params[k] for k in self.encoder.trainable}, train_config.lr, train_config.momentum, train_config.weight_decay)
        self.bank: MemoryBank = init_bank(index, encoder_config.dim, train_config.bank_mode,
                                          derive_seed(seed, "bank"), train_config.bank_update_rate)
        self.shuffle_rng = np.random.default_rng(derive_seed(seed, "shuffle"))
        self.negative_rng = np.random.default_rng(derive_seed(seed, "negatives"))
        self.augment_seed = derive_seed(seed, "augment")
        self.partition = None if self.loss_cfg.z_estimate == "auto" else float(self.loss_cfg.z_estimate)
        self.epoch = 0
        self.use_second = self.loss_cfg.second_order_weight > 0
        self.use_aux = self.loss_cfg.aux_weight > 0 and encoder_config.rotation_head
        if self.use_second and train_config.bank_mode != "per-frame":
            raise ConfigurationError("the second-order loss needs a per-frame memory bank")
        if encoder_config.in_channels != 3:
            raise ConfigurationError("pretraining consumes RGB frames (in_channels = 3)")
        longest = max(len(self.bank.video_keys(v.video_id)) for v in index.videos)
        self.n_negatives = min(self.loss_cfg.n_negatives, len(self.bank) - longest)
        if self.n_negatives < 1:
            raise ConfigurationError(
                f"not enough negatives: the bank holds {len(self.bank)} entries and the longest video spans {longest}")

    def _emit(self, event: str, **info) -> None:
        for hook in self.hooks:
            hook(event, self, info)

    def _views(self, pairs):
        """Augmented anchor, positive, next-frame and rotated views for a batch of pairs."""
        e = self.epoch
        frames, seeds, kinds = [], [], []
        thirds = []
        for i, (a, p) in enumerate(pairs):
            frames += [self.frames[a.video_id][a.frame_index], self.frames[p.video_id][p.frame_index]]
            seeds += [[self.augment_seed, e, a.video_id, a.frame_index, 0], [self.augment_seed, e, p.video_id, p.frame_index, 1]]
            if self.use_second and a.frame_index + 2 < len(self.frames[a.video_id]):
                thirds.append(i)
                frames.append(self.frames[a.video_id][a.frame_index + 2])
                seeds.append([self.augment_seed, e, a.video_id, a.frame_index + 2, 2])
        views = augment_views(frames, seeds, self.aug, self.cfg.workers)
        anchors, positives, nexts = [], [], []
        it = iter(views)
        has_third = set(thirds)
        for i in range(len(pairs)):
            anchors.append(next(it))
            positives.append(next(it))
            if i in has_third:
                nexts.append(next(it))
        rotations = []
        if self.use_aux:
            for a, _ in pairs:
                rng = np.random.default_rng([self.augment_seed, e, a.video_id, a.frame_index, 3])
                rotations.append(int(rng.integers(4)))
        return anchors, positives, nexts, thirds, rotations

    def step(self, pairs, progress: float) -> float:
        """One optimization step over ``pairs``; returns the summed per-sample loss."""
        B = len(pairs)
        anchors, positives, nexts, thirds, rotations = self._views(pairs)
        rotated = [rotate90(v, k) for v, k in zip(anchors, rotations)]
        X = to_chw(np.stack(anchors + positives + nexts + rotated))
        i_pos, i_next, i_rot = B, 2 * B, 2 * B + len(nexts)
        r_t = radius(self.mining, min(progress, self.mining.epochs))
        with self.bank.step():
            self._emit("forward", pairs=pairs)
            emb, pooled, cache = self.encoder.forward(X, train=True)
            emb64 = emb.astype(np.float64)
            d_emb = np.zeros_like(emb64)
            d_rot = np.zeros((len(X), 4)) if self.use_aux else None
            rot_logits = self.encoder.rotation_logits(pooled[i_rot:]).astype(np.float64) if self.use_aux else None
            next_of = {i: j for j, i in enumerate(thirds)}
            total = 0.0
            for i, (a, p) in enumerate(pairs):
                anchor, positive = emb64[i], emb64[i_pos + i]
                keys = self._negatives(anchor, a.video_id, r_t)
                negs = self.bank.get(keys).astype(np.float64)
                if self.loss_cfg.nce_mode == "nce":
                    if self.partition is None:
                        self.partition = estimate_partition(negs @ anchor, self.loss_cfg.temperature, len(self.bank))
                    first = nce_loss(anchor, positive, negs, self.loss_cfg.temperature, len(self.bank), self.partition)
                else:
                    first = first_order_loss(anchor, positive, negs, self.loss_cfg.temperature)
                second = None
                if i in next_of:
                    within = sample_within_video(self.bank, a.video_id, (a.frame_index, a.frame_index + 1, a.frame_index + 2),
                                                 self.loss_cfg.n_within_negatives, self.negative_rng)
                    if within.size:
                        try:
                            second = second_order_loss(anchor, positive, emb64[i_next + next_of[i]],
                                                       self.bank.get(within).astype(np.float64), self.loss_cfg.temperature)
                        except DegenerateSegmentError:
                            second = None
                aux = rotation_aux_loss(rot_logits[i], rotations[i]) if self.use_aux else None
                res = combined_loss(first, second, aux, self.loss_cfg)
                total += res.value
                g = res.gradients
                d_emb[i] += g["anchor"]
                d_emb[i_pos + i] += g["positive"]
                if "second" in g:
                    d_emb[i_next + next_of[i]] += g["second"]
                if aux is not None:
                    d_rot[i_rot + i] = g["logits"]
            grads = self.encoder.backward(cache, d_emb=d_emb / B, d_rot=None if d_rot is None else d_rot / B)
            if not math.isfinite(total) or not all(np.all(np.isfinite(v)) for v in grads.values()):
                raise FloatingPointError("non-finite loss or gradient during pretraining")
            self.optimizer.step(grads)
            if not all(np.all(np.isfinite(v)) for v in self.encoder.params.values()):
                raise FloatingPointError("non-finite weights after SGD step")
            self._emit("sgd", pairs=pairs)
            for i, (a, _) in enumerate(pairs):
                self.bank.update(a, emb[i])
        self._emit("bank_update", pairs=pairs)
        return total

    def _negatives(self, anchor, video_id: int, r_t: float) -> np.ndarray:
        if self.mining.enabled:
            return select_negatives(self.bank, anchor, video_id, self.n_negatives, r_t, self.negative_rng)
        return self.bank.sample_uniform_negatives(video_id, self.n_negatives, self.negative_rng)

    def epoch_pairs(self):
        if self.cfg.anchor_mode == "every-frame":
            pairs = enumerate_anchor_pairs(self.index, "every-frame")
        else:
            pairs = enumerate_anchor_pairs(self.index, "one-per-video", self.shuffle_rng)
        order = self.shuffle_rng.permutation(len(pairs))
        return [pairs[i] for i in order]

    def run_epoch(self) -> float:
        """Train one epoch; returns the mean per-anchor loss."""
        self.optimizer.lr = lr_at(self.cfg, self.epoch)
        pairs = self.epoch_pairs()
        bs = self.cfg.batch_size
        steps = math.ceil(len(pairs) / bs)
        total = 0.0
        for s in range(steps):
            batch = pairs[s * bs:(s + 1) * bs]
            total += self.step(batch, self.epoch + s / steps)
        self.epoch += 1
        return total / len(pairs)

    def checkpoint(self, extra_meta: Optional[dict] = None) -> Checkpoint:
        arrays = encoder_to_arrays(self.encoder)
        arrays.update({f"optimizer/{k}": v for k, v in self.optimizer.velocity.items()})
        arrays["bank/vectors"] = self.bank.vectors
        arrays = {k: v.copy() for k, v in arrays.items()}  # a snapshot, not views of live training state
        meta = {
            "kind": "pretrain",
            "epoch": self.epoch,
            "lr": self.optimizer.lr,
            "partition": self.partition,
            "config": {
                "encoder": dataclasses.asdict(self.encoder_config),
                "train": dataclasses.asdict(self.cfg),
                "loss": dataclasses.asdict(self.loss_cfg),
                "mining": dataclasses.asdict(self.mining),
                "augment": dataclasses.asdict(self.aug),
            },
            "bank": {"mode": self.bank.mode, "update_rate": self.bank.update_rate},
            "index": index_to_meta(self.index),
            "rng": {
                "shuffle": self.shuffle_rng.bit_generator.state,
                "negatives": self.negative_rng.bit_generator.state,
            },
        }
        meta.update(extra_meta or {})
        return Checkpoint(arrays, meta)

    def restore(self, ckpt: Checkpoint) -> None:
        """Resume from a checkpoint written by ``checkpoint``."""
        for k, v in ckpt.group("encoder").items():
            self.encoder.params[k][...] = v
        for k, v in ckpt.group("optimizer").items():
            self.optimizer.velocity[k][...] = v
        self.bank.vectors[...] = ckpt.arrays["bank/vectors"]
        self.shuffle_rng.bit_generator.state = ckpt.meta["rng"]["shuffle"]
        self.negative_rng.bit_generator.state = ckpt.meta["rng"]["negatives"]
        self.partition = ckpt.meta["partition"]
        self.epoch = int(ckpt.meta["epoch"])


def embed_frames(encoder: Encoder) -> Callable:
    return lambda frames: encoder.encode(to_chw(frames))


def write_metrics(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([r["epoch"]] + [repr(float(r[k])) for k in METRICS_HEADER[1:]])


def read_metrics(path) -> list:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    return [dict(zip(METRICS_HEADER, [int(r[0])] + [float(x) for x in r[1:]])) for r in rows[1:]]


def pretrain(dataset: DatasetIndex, encoder_config: EncoderConfig, train_config: TrainConfig, out_dir=None,
             loss_config: Optional[LossConfig] = None, mining: Optional[MiningSchedule] = None,
             augment_config: Optional[AugmentationConfig] = None, videos=None, hooks=None,
             log: Optional[Callable] = None) -> PretrainResult:
    """Self-supervised pretraining on the training split of ``dataset``.

    Per epoch, writes ``epoch_XXX.ckpt`` and rewrites ``metrics.tsv`` in
    ``out_dir`` (when given).  TAC/MAC are measured on the held-out split
    with unaugmented frames; the held-out split is also what
    ``initial_coherency`` reports for the freshly initialized encoder.
    """
    if videos is None:
        videos = load_all(dataset)
    train_ids, held_ids = split_videos(dataset, train_config.holdout_fraction, derive_seed(train_config.seed, "split"))
    if not held_ids:
        held_ids = train_ids
    train_index = dataset.subset(train_ids)
    trainer = Pretrainer(train_index, [videos[i] for i in train_ids], encoder_config, train_config,
                         loss_config, mining, augment_config, hooks)
    held_videos = [videos[i] for i in held_ids]
    held_labels = None if dataset.labels is None else [int(dataset.labels[i]) for i in held_ids]
    coh_seed = derive_seed(train_config.seed, "coherency")

    def coherency():
        return coherency_report(embed_frames(trainer.encoder), held_videos, train_config.coherency_videos,
                                held_labels, coh_seed, video_ids=held_ids)

    initial = coherency()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rows = []
    split_meta = {"split": {"train": train_ids, "holdout": held_ids}, "dataset": index_to_meta(dataset)}
    ckpt = None
    for _ in range(train_config.epochs):
        mean_loss = trainer.run_epoch()
        rep = coherency()
        row = {
            "epoch": trainer.epoch,
            "mean_loss": mean_loss,
            "lr": trainer.optimizer.lr,
            "r_t": radius(trainer.mining, float(trainer.epoch)),
            "mean_TAC": rep.mean_tac,
            "mean_MAC": rep.mean_mac,
        }
        rows.append(row)
        if log:
            log(row)
        ckpt = trainer.checkpoint(split_meta)
        if out is not None:
            save_checkpoint(ckpt, out / f"epoch_{trainer.epoch:03d}.ckpt")
            write_metrics(rows, out / "metrics.tsv")
    return PretrainResult(ckpt, rows, initial, trainer.encoder, train_ids, held_ids)


def random_init_checkpoint(encoder_config: EncoderConfig, seed: int = 0) -> Checkpoint:
    """Encoder-only checkpoint of the weights pretraining would start from."""
    encoder = Encoder.init(encoder_config, seed=derive_seed(seed, "encoder"))
    return Checkpoint(encoder_to_arrays(encoder), {"kind": "init", "epoch": 0,
                                                   "config": {"encoder": dataclasses.asdict(encoder_config)}})


__all__ = [
    "ConfigurationError", "TrainConfig", "Pretrainer", "PretrainResult", "pretrain", "lr_at", "split_videos",
    "encoder_from_checkpoint", "load_checkpoint", "save_checkpoint", "write_metrics", "read_metrics",
    "random_init_checkpoint", "embed_frames",
]
