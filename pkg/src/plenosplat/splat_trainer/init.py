"""Initial splat sets: from known surface points, from a COLMAP model, or random."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..camera_rig import import_colmap_points
from ..gaussian_model import GaussianModel, logit, rgb_to_sh_dc, sh_count
from .config import TrainConfig

INIT_OPACITY = 0.1
MIN_NEIGHBOR_DIST = 1e-7


@dataclass
class CustomFromGeometry:
    points: np.ndarray
    colors: np.ndarray
    freeze_positions: bool = True

    def __post_init__(self):
        self.points = np.asarray(self.points).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if self.points.shape[0] < 1:
            raise ValueError("custom initialization needs at least one point")
        if self.colors.shape[0] != self.points.shape[0]:
            raise ValueError("one color per point required")


@dataclass
class DefaultFromColmap:
    model_dir: str


@dataclass
class RandomSparse:
    n: int
    bbox_min: tuple[float, float, float] = (-1.0, -1.0, -1.0)
    bbox_max: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0


InitStrategy = CustomFromGeometry | DefaultFromColmap | RandomSparse


def knn_mean_distance(points: np.ndarray, k: int = 3) -> np.ndarray:
    """Mean distance from each point to its k nearest other points."""
    n = points.shape[0]
    if n == 1:
        return np.ones(1)
    kk = min(k, n - 1)
    dist, _ = cKDTree(points).query(points, k=kk + 1)
    return np.maximum(dist[:, 1:].mean(axis=1), MIN_NEIGHBOR_DIST)


def init_from_points(points, colors, cfg: TrainConfig, freeze_positions: bool = False) -> GaussianModel:
    """One isotropic splat per point, colored with the point's (view-averaged) RGB."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("cannot initialize from an empty point set")
    rgb = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    sh = np.zeros((n, sh_count(cfg.sh_degree), 3))
    sh[:, 0, :] = rgb_to_sh_dc(rgb)
    log_scale = np.log(knn_mean_distance(pts))
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    return GaussianModel(
        means=pts.copy(), log_scales=np.repeat(log_scale[:, None], 3, axis=1), rotations=rot,
        opacity_logits=np.full(n, logit(INIT_OPACITY)), sh=sh, sh_degree=cfg.sh_degree,
        frozen_positions=freeze_positions,
    )


def initialize(strategy, cfg: TrainConfig) -> GaussianModel:
    if isinstance(strategy, CustomFromGeometry):
        return init_from_points(strategy.points, strategy.colors, cfg, strategy.freeze_positions)
    if isinstance(strategy, DefaultFromColmap):
        pos, col = import_colmap_points(strategy.model_dir)
        if pos.shape[0] == 0:
            raise ValueError(f"{strategy.model_dir}: no points to initialize from")
        return init_from_points(pos, col, cfg, freeze_positions=False)
    if isinstance(strategy, RandomSparse):
        if strategy.n < 1:
            raise ValueError("RandomSparse needs n >= 1")
        rng = np.random.default_rng(strategy.seed)
        lo = np.asarray(strategy.bbox_min, dtype=np.float64)
        hi = np.asarray(strategy.bbox_max, dtype=np.float64)
        pts = lo + (hi - lo) * rng.random((strategy.n, 3))
        return init_from_points(pts, rng.random((strategy.n, 3)), cfg, freeze_positions=False)
    raise TypeError(f"unknown init strategy {strategy!r}")
