"""Temporally coherent frame embeddings learned from unlabelled video."""

from .checkpoint import Checkpoint, ChecksumError, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .core import (DatasetIndex, DegenerateVectorError, FrameRef, VideoEntry, VideoSequence, cosine_similarity,
                   derive_seed, enumerate_anchor_pairs, normalize)
from .curvature import CoherencyReport, ZeroSegmentWarning, coherency_report, mac, tac, turn_angles
from .data import (AugmentationConfig, SyntheticSpec, augment, generate_synthetic, load_all, load_dataset, rotate90,
                   stack_of_differences)
from .encoder import Encoder, EncoderConfig
from .evaluation import EvalConfig, build_classifier, evaluate_video, export_embeddings, finetune, top1
from .losses import (DegenerateSegmentError, LossConfig, LossResult, combined_loss, first_order_loss, nce_loss,
                     rotation_aux_loss, second_order_loss)
from .memory_bank import InsufficientNegativesError, MemoryBank, init_bank
from .mining import MiningSchedule, radius, select_negatives
from .trainer import Pretrainer, TrainConfig, pretrain, random_init_checkpoint

__version__ = "0.1.0"
