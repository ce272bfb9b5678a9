"""Image fidelity, surface adherence and size accounting for transcoded models."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .gaussian_model import GaussianModel, export_gs_ply
from .plenoptic_io import PlenopticPointCloud, write_plenoptic_ply
from .splat_trainer.loss import ssim_and_grad
from .splat_trainer.rasterizer import forward_render


@dataclass(frozen=True)
class ImageMetrics:
    psnr_db: float  # +inf for identical images
    ssim: float


def psnr(a, b) -> float:
    x = np.asarray(getattr(a, "pixels", a), dtype=np.float64)
    y = np.asarray(getattr(b, "pixels", b), dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    return math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)


def image_metrics(a, b) -> ImageMetrics:
    p = psnr(a, b)
    s, _ = ssim_and_grad(a, b, need_grad=False)
    return ImageMetrics(p, s)


@dataclass(frozen=True, eq=False)
class SurfaceDistanceStats:
    distances: np.ndarray
    mean: float
    median: float
    p95: float
    max: float

    @classmethod
    def from_distances(cls, d: np.ndarray) -> "SurfaceDistanceStats":
        if d.size == 0:
            return cls(d, 0.0, 0.0, 0.0, 0.0)
        return cls(d, float(d.mean()), float(np.median(d)), float(np.percentile(d, 95)), float(d.max()))


def point_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum((a - b) ** 2, axis=-1))


def surface_distance_stats(model: GaussianModel, reference: PlenopticPointCloud) -> SurfaceDistanceStats:
    """Distance from every splat center to its nearest reference point."""
    ref = np.asarray(getattr(reference, "positions", reference), dtype=np.float64).reshape(-1, 3)
    if ref.shape[0] == 0:
        raise ValueError("reference point set is empty")
    means = model.means
    if means.shape[0] == 0:
        return SurfaceDistanceStats.from_distances(np.zeros(0))
    # the tree only nominates candidates; distances use one fixed formula
    k = min(2, ref.shape[0])
    _, idx = cKDTree(ref).query(means, k=k)
    idx = idx.reshape(means.shape[0], k)
    d = point_distance(means[:, None, :], ref[idx]).min(axis=1)
    return SurfaceDistanceStats.from_distances(d)


@dataclass(frozen=True)
class SizeReport:
    plenoptic_bytes: int
    gs_bytes: int
    splat_count: int
    point_count: int

    @property
    def byte_ratio(self) -> float:
        return self.gs_bytes / self.plenoptic_bytes if self.plenoptic_bytes else math.inf

    @property
    def count_ratio(self) -> float:
        return self.splat_count / self.point_count if self.point_count else math.inf


def size_report(model: GaussianModel, cloud: PlenopticPointCloud) -> SizeReport:
    return SizeReport(len(write_plenoptic_ply(cloud)), len(export_gs_ply(model)), len(model), cloud.point_count)


def evaluate_views(model: GaussianModel, cameras, images, background=(0.0, 0.0, 0.0)) -> ImageMetrics:
    """Mean PSNR and SSIM of the model rendered at each camera against its image."""
    ps, ss = [], []
    for cam, img in zip(cameras, images):
        rendered, _ = forward_render(model, cam.intrinsics, cam.extrinsics, background)
        m = image_metrics(rendered, img)
        ps.append(m.psnr_db)
        ss.append(m.ssim)
    return ImageMetrics(float(np.mean(ps)), float(np.mean(ss)))


def metrics_dict(images: ImageMetrics | None, surface: SurfaceDistanceStats | None, size: SizeReport) -> dict:
    def num(x):
        return "inf" if x is not None and math.isinf(x) else x

    return {
        "psnr_db": num(images.psnr_db) if images else None,
        "ssim": images.ssim if images else None,
        "surface_p95": surface.p95 if surface else None,
        "surface_mean": surface.mean if surface else None,
        "surface_max": surface.max if surface else None,
        "splat_count": size.splat_count,
        "point_count": size.point_count,
        "gs_bytes": size.gs_bytes,
        "pc_bytes": size.plenoptic_bytes,
    }


def write_metrics(metrics: dict, path=None) -> str:
    text = json.dumps(metrics, indent=2, sort_keys=True) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
