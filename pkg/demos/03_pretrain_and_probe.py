"""Desk-scale run: pretrain on synthetic motion videos, then compare linear probes.

Takes about a minute and a half on one CPU core.
"""
import tempfile
from pathlib import Path

from coherent_embed import EvalConfig, build_classifier, finetune, generate_synthetic, load_all, load_config, pretrain
from coherent_embed.trainer import random_init_checkpoint

cfg = load_config(Path(__file__).resolve().parent.parent / "configs" / "desk.cfg")
seed = 0

with tempfile.TemporaryDirectory() as tmp:
    index = generate_synthetic(cfg.synth, Path(tmp) / "data")
    videos = load_all(index)
    print(f"{len(index)} videos, {index.num_frames} frames")

    res = pretrain(index, cfg.encoder, cfg.train, Path(tmp) / "run", cfg.loss, cfg.mining, cfg.augment,
                   videos=videos, log=lambda row: print(
                       f"epoch {row['epoch']:2d}  loss {row['mean_loss']:.3f}  r_t {row['r_t']:+.3f}  "
                       f"TAC {row['mean_TAC']:.1f}  MAC {row['mean_MAC']:.1f}"))
    print(f"held-out TAC at init {res.initial_coherency.mean_tac:.1f} -> {res.metrics[-1]['mean_TAC']:.1f}")

    probe = EvalConfig(seed=seed)
    for name, ckpt in (("pretrained", res.checkpoint), ("random init", random_init_checkpoint(cfg.encoder, seed))):
        clf = build_classifier(ckpt, cfg.synth.num_classes, probe)
        out = finetune(clf, videos, index.labels, probe, res.train_ids, res.holdout_ids, cfg.augment)
        print(f"{name:12s} linear probe top-1 {out.best_top1:.3f} (best epoch {out.best_epoch})")
