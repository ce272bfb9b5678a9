"""Multi-view image synthesis for plenoptic point clouds.

Each point's color for a given viewer is blended from its per-capture-view
colors, weighting every capture camera by how well its direction to the
point agrees with the viewer's direction (raised to a sharpness power).
Points are then splatted as hard-edged discs with a z-buffer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .camera_rig import (
    CameraExtrinsics,
    CameraIntrinsics,
    CameraSet,
    export_colmap_model,
    import_colmap_cameras,
    project_points,
)
from .plenoptic_io import PlenopticPointCloud


class DegenerateGeometryError(ValueError):
    pass


class RenderConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RenderConfig:
    sharpness_n: float = 10.0
    point_radius_px: float = 1.5
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.sharpness_n <= 0:
            raise ValueError("sharpness_n must be positive")
        if self.point_radius_px <= 0:
            raise ValueError("point_radius_px must be positive")


@dataclass(eq=False)
class Image:
    """Row-major RGB raster, float [0, 1] in memory."""

    pixels: np.ndarray  # (H, W, 3)

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got {px.shape}")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def filled(cls, width: int, height: int, color) -> "Image":
        return cls(np.broadcast_to(np.asarray(color, dtype=np.float64), (height, width, 3)).copy())

    def to_uint8(self) -> np.ndarray:
        return np.rint(np.clip(self.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)

    def save_png(self, path) -> None:
        PILImage.fromarray(self.to_uint8()).save(path, format="PNG")

    @classmethod
    def load_png(cls, path) -> "Image":
        with PILImage.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        return cls(arr)


# -- view-dependent color ------------------------------------------------------


def _unit_rows(v, what):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise DegenerateGeometryError(f"zero-length {what} direction")
    return v / n


def interpolate_colors(points, colors, capture_cams, viewer, sharpness_n: float = 10.0) -> np.ndarray:
    """Blend per-view colors for many points at once.

    points (N, 3), colors (N, N_c, 3), capture_cams (N_c, 3), viewer (3,).
    Weights are ``max(0, cos)**n`` on unit directions; a point whose weights
    all vanish gets the plain mean of its view colors.
    """
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cols = np.asarray(colors, dtype=np.float64)
    C = np.asarray(capture_cams, dtype=np.float64).reshape(-1, 3)
    V = np.asarray(viewer, dtype=np.float64).reshape(3)
    to_view = _unit_rows(V[None, :] - P, "viewer")
    to_cam = _unit_rows(C[None, :, :] - P[:, None, :], "camera")
    d = np.einsum("pck,pk->pc", to_cam, to_view)
    w = np.maximum(d, 0.0) ** sharpness_n
    wsum = w.sum(axis=1)
    out = np.empty((P.shape[0], 3))
    ok = wsum > 0
    # normalizing first keeps symmetric blends exact, e.g. two equal weights give 0.5 each
    out[ok] = np.einsum("pc,pck->pk", w[ok] / wsum[ok, None], cols[ok])
    out[~ok] = cols[~ok].mean(axis=1)
    return out


def interpolate_color(point_pos, point_colors, capture_cams, viewer, sharpness_n: float = 10.0) -> np.ndarray:
    cols = np.asarray(point_colors, dtype=np.float64).reshape(1, -1, 3)
    return interpolate_colors(np.reshape(point_pos, (1, 3)), cols, capture_cams, viewer, sharpness_n)[0]


# -- point splatting ---------------------------------------------------------


def rasterize_points(points, intr: CameraIntrinsics, extr: CameraExtrinsics,
                     radius_px: float, chunk: int = 100_000) -> tuple[np.ndarray, np.ndarray]:
    """Hard z-buffered disc splatting.

    Returns (index buffer (H, W) with -1 for empty pixels, depth buffer with
    +inf for empty pixels). Pixel (x, y) samples image coordinates (x, y);
    ties in depth go to the lower point index.
    """
    W, H = intr.width, intr.height
    best_key = np.full(W * H, np.inf)
    best_idx = np.full(W * H, -1, dtype=np.int64)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    R = int(math.ceil(radius_px))
    off = np.arange(-R, R + 2)
    ox, oy = [a.ravel() for a in np.meshgrid(off, off)]
    r2 = radius_px * radius_px
    for start in range(0, pts.shape[0], chunk):
        pix, z = project_points(intr, extr, pts[start:start + chunk])
        front = np.flatnonzero(z > 0)
        if front.size == 0:
            continue
        u, v = pix[front, 0], pix[front, 1]
        px = np.floor(u)[:, None].astype(np.int64) + ox[None, :]
        py = np.floor(v)[:, None].astype(np.int64) + oy[None, :]
        inside = ((px - u[:, None]) ** 2 + (py - v[:, None]) ** 2 <= r2) & (px >= 0) & (px < W) & (py >= 0) & (py < H)
        rows, cols_ = np.nonzero(inside)
        flat = py[rows, cols_] * W + px[rows, cols_]
        idx = start + front[rows]
        depth = z[front[rows]]
        # merge with the current buffer winners
        have = best_idx >= 0
        flat = np.concatenate([np.flatnonzero(have), flat])
        idx = np.concatenate([best_idx[have], idx])
        depth = np.concatenate([best_key[have], depth])
        order = np.lexsort((idx, depth, flat))
        flat, idx, depth = flat[order], idx[order], depth[order]
        first = np.ones(flat.size, dtype=bool)
        first[1:] = flat[1:] != flat[:-1]
        best_idx[flat[first]] = idx[first]
        best_key[flat[first]] = depth[first]
    return best_idx.reshape(H, W), best_key.reshape(H, W)


def render_view(cloud: PlenopticPointCloud, intr: CameraIntrinsics, extr: CameraExtrinsics,
                viewer_pos, cfg: RenderConfig = RenderConfig()) -> Image:
    if cloud.capture_camera_positions is None:
        raise RenderConfigError("cloud has no capture camera positions")
    idx_buf, _ = rasterize_points(cloud.positions, intr, extr, cfg.point_radius_px)
    img = Image.filled(intr.width, intr.height, cfg.background)
    hit = idx_buf >= 0
    if hit.any():
        winners, inverse = np.unique(idx_buf[hit], return_inverse=True)
        colors = interpolate_colors(
            cloud.positions[winners], cloud.view_colors[winners],
            cloud.capture_camera_positions, viewer_pos, cfg.sharpness_n,
        )
        img.pixels[hit] = colors[inverse]
    return img


# -- datasets ------------------------------------------------------------------


@dataclass
class DatasetManifest:
    entries: list[tuple[str, int]] = field(default_factory=list)  # (image_name, camera_id)
    image_dir: str = "images"
    colmap_dir: str = "sparse/0"

    def __post_init__(self):
        names = [n for n, _ in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("image names must be unique")

    def __len__(self) -> int:
        return len(self.entries)

    def to_json(self) -> str:
        return json.dumps({
            "image_dir": self.image_dir,
            "colmap_dir": self.colmap_dir,
            "images": [{"image_name": n, "camera_id": c} for n, c in self.entries],
        }, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        return cls([(e["image_name"], int(e["camera_id"])) for e in d["images"]],
                   d.get("image_dir", "images"), d.get("colmap_dir", "sparse/0"))


MANIFEST_NAME = "manifest.json"


def render_dataset(cloud: PlenopticPointCloud, rig: CameraSet, cfg: RenderConfig, out_dir) -> DatasetManifest:
    """Render one PNG per rig camera and write the manifest and COLMAP model."""
    root = Path(out_dir)
    manifest = DatasetManifest([(c.image_name, c.id) for c in rig])
    img_dir = root / manifest.image_dir
    img_dir.mkdir(parents=True, exist_ok=True)
    for cam in rig:
        img = render_view(cloud, cam.intrinsics, cam.extrinsics, cam.position, cfg)
        img.save_png(img_dir / cam.image_name)
    export_colmap_model(rig, cloud, root / manifest.colmap_dir)
    (root / MANIFEST_NAME).write_text(manifest.to_json())
    return manifest


def load_dataset(root) -> tuple[DatasetManifest, CameraSet, list[Image]]:
    """Load manifest, cameras and images in manifest order."""
    root = Path(root)
    manifest = DatasetManifest.from_json((root / MANIFEST_NAME).read_text())
    all_cams = import_colmap_cameras(root / manifest.colmap_dir)
    cams, images = [], []
    for name, cam_id in manifest.entries:
        try:
            cam = all_cams.by_id(cam_id)
        except KeyError:
            raise ValueError(f"manifest camera {cam_id} not in COLMAP model") from None
        img = Image.load_png(root / manifest.image_dir / name)
        if (img.width, img.height) != (cam.intrinsics.width, cam.intrinsics.height):
            raise ValueError(f"{name}: image size does not match camera {cam_id}")
        cams.append(cam)
        images.append(img)
    return manifest, CameraSet(cams), images
