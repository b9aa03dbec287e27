"""Compact trainable models: IAA regression, diagnosis, and multitask."""

from .losses import (
    ProbabilityClampWarning,
    focal_loss,
    focal_loss_batch,
    multitask_loss,
    smooth_l1,
    smooth_l1_grad,
)
from .network import Network, NetworkConfig, Prediction, softmax
from .synth import SynthDataset, SynthImage, SynthMask, fold_data, synth_folds, synth_generate, write_synth_dataset
from .training import (
    EpochLog,
    EvalReport,
    FoldData,
    TrainConfig,
    TrainResult,
    TrainingDivergedError,
    auroc_from_scores,
    canonical_model_kind,
    evaluate,
    gradient_check,
    sgd_step,
    train,
    train_step,
)

__all__ = [
    "EpochLog",
    "EvalReport",
    "FoldData",
    "Network",
    "NetworkConfig",
    "Prediction",
    "ProbabilityClampWarning",
    "SynthDataset",
    "SynthImage",
    "SynthMask",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "auroc_from_scores",
    "canonical_model_kind",
    "evaluate",
    "focal_loss",
    "focal_loss_batch",
    "fold_data",
    "gradient_check",
    "multitask_loss",
    "sgd_step",
    "smooth_l1",
    "smooth_l1_grad",
    "softmax",
    "synth_folds",
    "synth_generate",
    "train",
    "train_step",
    "write_synth_dataset",
]
