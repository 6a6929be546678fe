"""Scribble-supervised segmentation with a triple-branch CNN-Transformer model."""

from .acam import AcamBranch, ModulationParams, gaussian_modulation
from .config import TrainConfig, load_config
from .data import UNLABELED, Sample, augment, load_dataset, normalize_intensity, resize_sample
from .encoder import EncoderConfig, EncoderState, HybridEncoder
from .evaluation import EvalResult, bootstrap_ci, dice_score, evaluate
from .losses import (
    LossReport,
    LossWeights,
    acam_consistency_loss,
    dice_loss,
    mix_pseudo_label,
    partial_cross_entropy,
    pseudo_label_loss,
    scribble_loss,
    total_loss,
)
from .network import ScribFormer
from .synthetic import SyntheticSpec, generate_synthetic
from .training import DecoupledAdamW, fit, load_checkpoint, save_checkpoint, train_step

__version__ = "0.1.0"

__all__ = [
    "AcamBranch",
    "DecoupledAdamW",
    "EncoderConfig",
    "EncoderState",
    "EvalResult",
    "HybridEncoder",
    "LossReport",
    "LossWeights",
    "ModulationParams",
    "Sample",
    "ScribFormer",
    "SyntheticSpec",
    "TrainConfig",
    "UNLABELED",
    "acam_consistency_loss",
    "augment",
    "bootstrap_ci",
    "dice_loss",
    "dice_score",
    "evaluate",
    "fit",
    "gaussian_modulation",
    "generate_synthetic",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "mix_pseudo_label",
    "normalize_intensity",
    "partial_cross_entropy",
    "pseudo_label_loss",
    "resize_sample",
    "save_checkpoint",
    "scribble_loss",
    "total_loss",
    "train_step",
]
