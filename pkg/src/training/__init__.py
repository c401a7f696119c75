"""Optimization: Adam, polynomial decay, the training loop and evaluation."""

from src.training.optim import OptimizerState, adam_step, clip_gradients, global_grad_norm, poly_lr
from src.training.trainer import (
    CrossValidationResult,
    Trainer,
    TrainResult,
    TrainStatus,
    cross_validate,
    evaluate,
    evaluate_graph,
    predict_case,
    train,
)

__all__ = [
    "OptimizerState",
    "adam_step",
    "clip_gradients",
    "global_grad_norm",
    "poly_lr",
    "CrossValidationResult",
    "Trainer",
    "TrainResult",
    "TrainStatus",
    "cross_validate",
    "evaluate",
    "evaluate_graph",
    "predict_case",
    "train",
]
