from .checkpoint import load_checkpoint, save_checkpoint
from .model import (
    ModelConfig,
    ModelState,
    backward,
    forward,
    init_model,
    predict,
    predict_batch,
    soft_cross_entropy,
    softmax,
)
from .optim import AdamState, OptimizerConfig, TrainStats, adamw_step, train_epochs

__all__ = [
    "AdamState",
    "ModelConfig",
    "ModelState",
    "OptimizerConfig",
    "TrainStats",
    "adamw_step",
    "backward",
    "forward",
    "init_model",
    "load_checkpoint",
    "predict",
    "predict_batch",
    "save_checkpoint",
    "soft_cross_entropy",
    "softmax",
    "train_epochs",
]
