"""WAU-net assembly, parameter accounting and checkpoints."""

from src.network.checkpoint import Checkpoint, OptimizerSnapshot, load_checkpoint, save_checkpoint
from src.network.params import analytic_parameter_count
from src.network.waunet import (
    Edge,
    NetworkGraph,
    build_waunet,
    forward,
    fuse,
    layer_grad_checks,
    network_grad_check,
    predict_labels,
)

__all__ = [
    "Checkpoint",
    "OptimizerSnapshot",
    "load_checkpoint",
    "save_checkpoint",
    "analytic_parameter_count",
    "Edge",
    "NetworkGraph",
    "build_waunet",
    "forward",
    "fuse",
    "layer_grad_checks",
    "network_grad_check",
    "predict_labels",
]
