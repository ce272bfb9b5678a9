"""Desk-scale differentiable splatting and the training loop."""

from .config import TrainConfig
from .init import (
    CustomFromGeometry,
    DefaultFromColmap,
    RandomSparse,
    init_from_points,
    initialize,
    knn_mean_distance,
)
from .loss import compute_loss, ssim_and_grad
from .optim import (
    DensifyResult,
    DensifyStats,
    OptimizerState,
    adam_step,
    densify_and_prune,
)
from .rasterizer import RenderCache, SplatGrads, StaleCacheError, backward_params, forward_render
from .train import LossRecord, TrainingData, TrainResult, train, view_schedule

__all__ = [
    "TrainConfig",
    "CustomFromGeometry",
    "DefaultFromColmap",
    "RandomSparse",
    "init_from_points",
    "initialize",
    "knn_mean_distance",
    "compute_loss",
    "ssim_and_grad",
    "DensifyResult",
    "DensifyStats",
    "OptimizerState",
    "adam_step",
    "densify_and_prune",
    "RenderCache",
    "SplatGrads",
    "StaleCacheError",
    "backward_params",
    "forward_render",
    "LossRecord",
    "TrainingData",
    "TrainResult",
    "train",
    "view_schedule",
]
