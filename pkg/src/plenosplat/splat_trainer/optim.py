"""Adam with per-parameter-group learning rates, and adaptive density control."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..gaussian_model import GaussianModel, quats_to_rotmats
from .config import TrainConfig

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-15


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, model: GaussianModel) -> "OptimizerState":
        p = model.params()
        return cls({g: np.zeros_like(a) for g, a in p.items()}, {g: np.zeros_like(a) for g, a in p.items()})

    def select(self, idx) -> None:
        for d in (self.m, self.v):
            for g in d:
                d[g] = d[g][idx]

    def append_zeros(self, n: int) -> None:
        for d in (self.m, self.v):
            for g in d:
                d[g] = np.concatenate([d[g], np.zeros((n,) + d[g].shape[1:])])


def group_learning_rates(model: GaussianModel, cfg: TrainConfig) -> dict[str, np.ndarray | float]:
    lr_pos = 0.0 if model.frozen_positions else cfg.lr_position
    sh_lr = np.full((model.sh.shape[1], 1), cfg.lr_sh * cfg.sh_rest_lr_scale)
    sh_lr[0] = cfg.lr_sh
    return {
        "means": lr_pos,
        "log_scales": cfg.lr_scale,
        "rotations": cfg.lr_rotation,
        "opacity_logits": cfg.lr_opacity,
        "sh": sh_lr,
    }


def adam_step(model: GaussianModel, grads: dict[str, np.ndarray], state: OptimizerState,
              cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place.

    Groups with a zero learning rate (and means of a frozen model) are not
    touched at all, so they stay bit-identical.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - BETA1 ** t
    c2 = 1.0 - BETA2 ** t
    for group, lr in group_learning_rates(model, cfg).items():
        if np.all(np.asarray(lr) == 0.0):
            continue
        g = grads[group]
        p = getattr(model, group)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {group}")
        m = state.m[group]
        v = state.v[group]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        delta = lr * (m / c1) / (np.sqrt(v / c2) + EPS)
        p -= delta
        if group == "rotations":
            moved = np.any(delta != 0.0, axis=1)
            if moved.any():
                p[moved] /= np.linalg.norm(p[moved], axis=1, keepdims=True)


@dataclass
class DensifyStats:
    grad_accum: np.ndarray
    denom: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "DensifyStats":
        return cls(np.zeros(n), np.zeros(n))

    def add(self, means2d_grad: np.ndarray, visible: np.ndarray) -> None:
        self.grad_accum[visible] += np.linalg.norm(means2d_grad[visible], axis=1)
        self.denom[visible] += 1

    def mean(self) -> np.ndarray:
        out = np.zeros_like(self.grad_accum)
        ok = self.denom > 0
        out[ok] = self.grad_accum[ok] / self.denom[ok]
        return out


@dataclass
class DensifyResult:
    model: GaussianModel
    stats: DensifyStats
    n_cloned: int = 0
    n_split: int = 0
    n_pruned: int = 0


def densify_and_prune(model: GaussianModel, stats: DensifyStats, state: OptimizerState,
                      cfg: TrainConfig, rng: np.random.Generator | None = None) -> DensifyResult:
    """Clone small high-gradient splats, split large ones, drop transparent ones.

    Returns a new model; ``state`` is resized in place to match it. With
    ``cfg.densify`` off nothing changes.
    """
    if not cfg.densify:
        return DensifyResult(model, stats)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    n = len(model)
    hot = stats.mean() > cfg.densify_grad_threshold
    big = model.scales.max(axis=1) >= cfg.split_scale_threshold if n else np.zeros(0, bool)
    clone = np.flatnonzero(hot & ~big)
    split = np.flatnonzero(hot & big)

    parts = [model.select(np.setdiff1d(np.arange(n), split))]
    keep_state = np.setdiff1d(np.arange(n), split)
    state.select(keep_state)
    new_count = 0
    if clone.size:
        parts.append(model.select(clone))
        new_count += clone.size
    if split.size:
        children = model.select(np.repeat(split, 2))
        children.log_scales = children.log_scales - np.log(1.6)
        if not model.frozen_positions:
            s = np.exp(model.log_scales[np.repeat(split, 2)])
            R = quats_to_rotmats(children.rotations)
            offsets = np.einsum("nij,nj->ni", R, s * rng.standard_normal((children.means.shape[0], 3)))
            children.means = children.means + offsets
        parts.append(children)
        new_count += children.means.shape[0]
    merged = GaussianModel(
        **{g: np.concatenate([getattr(p, g) for p in parts]) for g in GaussianModel.PARAM_GROUPS},
        sh_degree=model.sh_degree, frozen_positions=model.frozen_positions,
    )
    state.append_zeros(new_count)

    alive = np.flatnonzero(merged.opacities >= cfg.prune_opacity_threshold)
    n_pruned = len(merged) - alive.size
    if n_pruned:
        merged = merged.select(alive)
        state.select(alive)
    return DensifyResult(merged, DensifyStats.zeros(len(merged)), clone.size, split.size, n_pruned)
