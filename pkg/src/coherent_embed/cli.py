"""Command-line entry point: ``python3 -m coherent_embed <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .core import derive_seed
from .data import DatasetError, generate_synthetic, load_all, load_dataset
from .evaluation import (build_classifier, classifier_checkpoint, classifier_from_checkpoint, export_embeddings,
                         finetune, top1)
from .evaluation import DatasetError as EvalDatasetError
from .trainer import (ConfigurationError, embed_frames, encoder_from_checkpoint, pretrain, random_init_checkpoint,
                      split_videos)
from .curvature import coherency_report

RUNTIME_ERRORS = (DatasetError, EvalDatasetError, CheckpointError, OSError, FloatingPointError, ValueError, KeyError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n\n{self.format_usage()}")


def _defaults_text() -> str:
    return "configuration keys (--set key=value) and defaults:\n" + "".join(
        f"  {line}\n" for line in RunConfig().dump().splitlines())


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="config file of 'section.field = value' lines")
    common.add_argument("--seed", type=int, help="root seed; overrides synth/train/eval seeds")
    common.add_argument("--out", help="output path")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides",
                        help="dotted-key override, repeatable (e.g. --set train.lr=0.01)")
    common.add_argument("--workers", type=int, help="augmentation worker threads (default 1)")

    parser = _Parser(prog="coherent_embed", description="Temporally coherent frame embeddings.",
                     epilog=_defaults_text(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = argparse.RawDescriptionHelpFormatter

    sub.add_parser("synth", parents=[common], help="render a synthetic dataset into --out",
                   epilog=_defaults_text(), formatter_class=fmt)

    p = sub.add_parser("pretrain", parents=[common], help="self-supervised pretraining",
                       epilog=_defaults_text(), formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset directory")

    p = sub.add_parser("finetune", parents=[common], help="train a classifier on top of a checkpoint",
                       epilog=_defaults_text(), formatter_class=fmt)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", help="pretrained checkpoint; omit to start from random initialization")

    p = sub.add_parser("evaluate", parents=[common], help="top-1 of a classifier checkpoint",
                       epilog=_defaults_text(), formatter_class=fmt)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["holdout", "train", "all"], default="holdout")

    p = sub.add_parser("metrics", parents=[common], help="mean TAC/MAC of a checkpoint over a dataset",
                       epilog=_defaults_text(), formatter_class=fmt)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", help="checkpoint to measure; omit for a random-init encoder")

    p = sub.add_parser("export-embeddings", parents=[common], help="write per-frame embeddings of videos",
                       epilog=_defaults_text(), formatter_class=fmt)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", help="checkpoint to embed with; omit for a random-init encoder")
    p.add_argument("--video", type=int, action="append", help="video id, repeatable (default: all)")
    return parser


def resolve_config(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides += [f"synth.seed={args.seed}", f"train.seed={args.seed}", f"eval.seed={args.seed}"]
    if args.workers is not None:
        overrides.append(f"train.workers={args.workers}")
    try:
        return load_config(args.config, overrides)
    except (ConfigurationError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _require_out(args) -> Path:
    if not args.out:
        raise UsageError(f"{args.command}: --out is required")
    return Path(args.out)


def _encoder_checkpoint(args, cfg: RunConfig):
    if args.checkpoint:
        return load_checkpoint(args.checkpoint)
    return random_init_checkpoint(cfg.encoder, cfg.train.seed)


def cmd_synth(args, cfg: RunConfig) -> int:
    index = generate_synthetic(cfg.synth, _require_out(args))
    print(f"wrote {len(index)} videos, {index.num_frames} frames to {args.out}")
    return 0


def cmd_pretrain(args, cfg: RunConfig) -> int:
    out = _require_out(args)
    index = load_dataset(args.data)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dump(), encoding="utf-8")

    def log(row):
        print("\t".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()), flush=True)

    res = pretrain(index, cfg.encoder, cfg.train, out, cfg.loss, cfg.mining, cfg.augment, log=log)
    print(f"initial held-out TAC={res.initial_coherency.mean_tac:.6g} MAC={res.initial_coherency.mean_mac:.6g}")
    return 0


def _split(index, cfg: RunConfig):
    train_ids, held_ids = split_videos(index, cfg.eval.holdout_fraction, derive_seed(cfg.eval.seed, "split"))
    return train_ids, held_ids or train_ids


def cmd_finetune(args, cfg: RunConfig) -> int:
    out = _require_out(args)
    index = load_dataset(args.data)
    if index.labels is None:
        raise DatasetError("fine-tuning needs a labelled dataset (manifest labels)")
    videos = load_all(index)
    train_ids, held_ids = _split(index, cfg)
    num_classes = int(np.max(index.labels)) + 1
    clf = build_classifier(_encoder_checkpoint(args, cfg), num_classes, cfg.eval)
    res = finetune(clf, videos, index.labels, cfg.eval, train_ids, held_ids, cfg.augment)
    for epoch, loss, acc in res.history:
        print(f"epoch={epoch}\ttrain_loss={loss:.6g}\tholdout_top1={acc:.6g}")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(classifier_checkpoint(res.classifier, cfg.eval, {
        "best_epoch": res.best_epoch, "best_top1": res.best_top1,
        "split": {"train": train_ids, "holdout": held_ids}}), out)
    print(f"best holdout top-1 {res.best_top1:.4f} at epoch {res.best_epoch}; wrote {out}")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    index = load_dataset(args.data)
    if index.labels is None:
        raise DatasetError("evaluation needs a labelled dataset (manifest labels)")
    clf = classifier_from_checkpoint(load_checkpoint(args.checkpoint))
    train_ids, held_ids = _split(index, cfg)
    ids = {"holdout": held_ids, "train": train_ids, "all": list(range(len(index)))}[args.split]
    videos = load_all(index)
    eval_cfg = cfg.eval
    eval_cfg.input_mode = clf.input_mode
    acc = top1(clf, [videos[i] for i in ids], [index.labels[i] for i in ids], eval_cfg)
    print(f"top1\t{acc:.6g}\tsplit={args.split}\tvideos={len(ids)}")
    return 0


def cmd_metrics(args, cfg: RunConfig) -> int:
    index = load_dataset(args.data)
    encoder = encoder_from_checkpoint(_encoder_checkpoint(args, cfg))
    videos = load_all(index)
    labels = None if index.labels is None else list(index.labels)
    rep = coherency_report(embed_frames(encoder), videos, cfg.train.coherency_videos, labels,
                           derive_seed(cfg.train.seed, "coherency"))
    print(f"mean_TAC\t{rep.mean_tac!r}\nmean_MAC\t{rep.mean_mac!r}\tvideos={len(rep.rows)}")
    if args.out:
        rep.write(args.out)
    return 0


def cmd_export(args, cfg: RunConfig) -> int:
    out = _require_out(args)
    index = load_dataset(args.data)
    ckpt = _encoder_checkpoint(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    ids = args.video if args.video else range(len(index))
    videos = load_all(index)
    for vid in ids:
        if not 0 <= vid < len(index):
            raise DatasetError(f"video id {vid} out of range 0..{len(index) - 1}")
        tsv, _ = export_embeddings(ckpt, videos[vid], out / f"video_{vid:05d}.tsv")
        print(tsv)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "metrics": cmd_metrics,
    "export-embeddings": cmd_export,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
