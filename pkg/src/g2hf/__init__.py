"""Framework-free saliency network on numpy with a hand-written gradient tape."""

from .estimator import SaliencyEstimator, check_images, check_masks
from .net import (
    NetConfig,
    SaliencyOutputs,
    bind_weights,
    forward,
    init_weights,
    load_weights,
    save_weights,
)
from .objective import f_measure, lr_schedule, mae_metric, rmsprop_step, total_loss
from .rng import Rng
from .tensor import ShapeError, Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "NetConfig",
    "Rng",
    "SaliencyEstimator",
    "SaliencyOutputs",
    "ShapeError",
    "Tape",
    "Tensor",
    "bind_weights",
    "check_images",
    "check_masks",
    "f_measure",
    "forward",
    "init_weights",
    "load_weights",
    "lr_schedule",
    "mae_metric",
    "rmsprop_step",
    "save_weights",
    "total_loss",
]
