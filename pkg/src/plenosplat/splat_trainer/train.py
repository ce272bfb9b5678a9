from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..camera_rig import CameraSet
from ..gaussian_model import GaussianModel
from ..view_renderer import Image, load_dataset
from .config import TrainConfig
from .init import initialize
from .loss import compute_loss
from .optim import DensifyStats, OptimizerState, adam_step, densify_and_prune
from .rasterizer import backward_params, forward_render


@dataclass
class TrainingData:
    cameras: CameraSet
    images: list[Image]

    def __post_init__(self):
        if len(self.cameras) == 0:
            raise ValueError("empty dataset")
        if len(self.cameras) != len(self.images):
            raise ValueError(f"{len(self.cameras)} cameras but {len(self.images)} images")
        for cam, img in zip(self.cameras, self.images):
            if (img.width, img.height) != (cam.intrinsics.width, cam.intrinsics.height):
                raise ValueError(f"image for camera {cam.id} does not match its intrinsics")

    @classmethod
    def from_dir(cls, root) -> "TrainingData":
        _, cams, images = load_dataset(root)
        return cls(cams, images)


@dataclass
class LossRecord:
    iteration: int
    view_id: int
    loss: float


@dataclass
class TrainResult:
    model: GaussianModel
    log: list[LossRecord] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "view_id", "loss"])
            for r in self.log:
                w.writerow([r.iteration, r.view_id, repr(r.loss)])


def view_schedule(n_views: int, iterations: int, seed: int):
    """Seeded epoch shuffle: every view once per epoch, fresh order each epoch."""
    rng = np.random.default_rng(seed)
    it = 0
    while it < iterations:
        for v in rng.permutation(n_views):
            if it >= iterations:
                return
            yield int(v)
            it += 1


def train(init, data: TrainingData, cfg: TrainConfig,
          callback: Callable[[int, GaussianModel], bool | None] | None = None) -> TrainResult:
    """Optimize splats against the dataset images.

    ``init`` is an init strategy or an already built GaussianModel (copied,
    never mutated). ``callback(iteration, model)`` runs after every step;
    returning True stops training early.
    """
    if isinstance(init, GaussianModel):
        model = init.copy()
    else:
        model = initialize(init, cfg)
    if len(model) == 0:
        raise ValueError("empty initial model")
    state = OptimizerState.zeros_like(model)
    stats = DensifyStats.zeros(len(model))
    rng = np.random.default_rng(cfg.seed + 1)
    result = TrainResult(model)
    for it, v in enumerate(view_schedule(len(data.cameras), cfg.iterations, cfg.seed), start=1):
        cam = data.cameras[v]
        rendered, cache = forward_render(model, cam.intrinsics, cam.extrinsics, cfg.background)
        loss, dimg = compute_loss(rendered, data.images[v], cfg.loss_lambda)
        grads = backward_params(cache, dimg)
        adam_step(model, grads.as_dict(), state, cfg)
        result.log.append(LossRecord(it, cam.id, loss))
        if cfg.densify:
            # pixel gradients to NDC units so the threshold does not depend on resolution
            ndc_scale = 0.5 * np.array([cam.intrinsics.width, cam.intrinsics.height], dtype=np.float64)
            stats.add(grads.means2d * ndc_scale, cache.vis)
            until = cfg.densify_until if cfg.densify_until is not None else cfg.iterations
            if it % cfg.densify_interval == 0 and it <= until:
                model = densify_and_prune(model, stats, state, cfg, rng).model
                stats = DensifyStats.zeros(len(model))
        result.model = model
        if callback is not None and callback(it, model):
            break
    result.model = model
    return result
