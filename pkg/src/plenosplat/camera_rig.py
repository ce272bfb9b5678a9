"""Camera rig generation, COLMAP conventions and COLMAP text-model I/O.

World->camera transforms follow COLMAP: ``X_cam = R @ X_world + t`` with
the camera looking down +Z, +X to the right and +Y down. Quaternions are
stored (w, x, y, z) with w >= 0.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

ORTHO_TOL = 1e-9


class PoseError(ValueError):
    """A viewport pose or rotation violates its orthonormality invariants."""


class UnsupportedCameraModelError(ValueError):
    pass


class ColmapParseError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


# -- quaternions -------------------------------------------------------------


def quat_to_rotmat(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotmat_to_quat(R) -> np.ndarray:
    """Shepperd's method; returns a unit quaternion with w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    diag = np.diag(R)
    k = int(np.argmax([tr, *diag]))
    if k == 0:
        s = 2.0 * math.sqrt(1.0 + tr)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif k == 1:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif k == 2:
        s = 2.0 * math.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * math.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q + 0.0  # drop negative zeros


# -- types -------------------------------------------------------------------


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    skew: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def centered(cls, width: int, height: int, fx: float, fy: float | None = None) -> "CameraIntrinsics":
        return cls(fx, fx if fy is None else fy, width / 2.0, height / 2.0, width, height)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class ViewportPose:
    position: np.ndarray
    up: np.ndarray
    front: np.ndarray

    def __post_init__(self):
        for name in ("position", "up", "front"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(3))
        if abs(np.linalg.norm(self.up) - 1.0) > ORTHO_TOL or abs(np.linalg.norm(self.front) - 1.0) > ORTHO_TOL:
            raise PoseError("up and front must be unit vectors")
        if abs(float(self.up @ self.front)) > ORTHO_TOL:
            raise PoseError("up and front must be orthogonal")


@dataclass(frozen=True, eq=False)
class CameraExtrinsics:
    rotation: np.ndarray  # (w, x, y, z), world -> camera
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > ORTHO_TOL:
            raise PoseError(f"rotation quaternion not unit length: {np.linalg.norm(q)}")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "CameraExtrinsics":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @property
    def R(self) -> np.ndarray:
        return quat_to_rotmat(self.rotation)

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.R.T @ self.translation


@dataclass(frozen=True, eq=False)
class Camera:
    id: int
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics
    viewport_pose: ViewportPose | None
    image_name: str

    @property
    def position(self) -> np.ndarray:
        if self.viewport_pose is not None:
            return self.viewport_pose.position
        return self.extrinsics.center


class CameraSet:
    """Ordered cameras with unique ids."""

    def __init__(self, cameras):
        self.cameras = tuple(cameras)
        ids = [c.id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise ValueError("camera ids must be unique")

    def __len__(self) -> int:
        return len(self.cameras)

    def __iter__(self) -> Iterator[Camera]:
        return iter(self.cameras)

    def __getitem__(self, i) -> Camera:
        return self.cameras[i]

    def by_id(self, cam_id: int) -> Camera:
        for c in self.cameras:
            if c.id == cam_id:
                return c
        raise KeyError(cam_id)

    def positions(self) -> np.ndarray:
        return np.array([c.position for c in self.cameras]).reshape(-1, 3)


# -- rig ---------------------------------------------------------------------


def fibonacci_sphere(n: int) -> np.ndarray:
    """n approximately equal-area directions on the unit sphere."""
    i = np.arange(n, dtype=np.float64) + 0.5
    y = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - y * y))
    theta = math.pi * (3.0 - math.sqrt(5.0)) * np.arange(n)
    return np.stack([r * np.cos(theta), y, r * np.sin(theta)], axis=1)


def look_at_pose(position, target) -> ViewportPose:
    position = np.asarray(position, dtype=np.float64)
    front = np.asarray(target, dtype=np.float64) - position
    front /= np.linalg.norm(front)
    up = np.array([0.0, 1.0, 0.0])
    up = up - (up @ front) * front
    if np.linalg.norm(up) < 1e-6:
        up = np.array([1.0, 0.0, 0.0])
        up = up - (up @ front) * front
    up /= np.linalg.norm(up)
    # one more projection pass keeps |up . front| at rounding level
    up -= (up @ front) * front
    up /= np.linalg.norm(up)
    return ViewportPose(position, up, front)


def generate_spherical_rig(n_cameras: int, center=(0.0, 0.0, 0.0), radius: float = 3.0,
                           intrinsics: CameraIntrinsics | None = None,
                           name_format: str = "view_{:03d}.png") -> CameraSet:
    if n_cameras < 1:
        raise ValueError("n_cameras must be >= 1")
    if radius <= 0:
        raise ValueError("radius must be positive")
    if intrinsics is None:
        intrinsics = CameraIntrinsics.centered(128, 128, 150.0)
    center = np.asarray(center, dtype=np.float64)
    cams = []
    for k, d in enumerate(fibonacci_sphere(n_cameras)):
        pose = look_at_pose(center + radius * d, center)
        cams.append(Camera(k + 1, intrinsics, viewport_to_colmap(pose), pose, name_format.format(k)))
    return CameraSet(cams)


def viewport_to_colmap(pose: ViewportPose) -> CameraExtrinsics:
    """Convert an (up, front) viewport pose to COLMAP world->camera extrinsics."""
    u, f = pose.up, pose.front
    if abs(np.linalg.norm(u) - 1.0) > ORTHO_TOL or abs(np.linalg.norm(f) - 1.0) > ORTHO_TOL or abs(u @ f) > ORTHO_TOL:
        raise PoseError("viewport pose is not orthonormal")
    R = np.stack([np.cross(f, u), -u, f])
    q = rotmat_to_quat(R)
    t = -quat_to_rotmat(q) @ pose.position + 0.0
    return CameraExtrinsics(q, t)


class Projection(NamedTuple):
    pixel: np.ndarray
    depth: float
    behind: bool


def project_points(intr: CameraIntrinsics, extr: CameraExtrinsics, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection; pixels of points at depth <= 0 are NaN."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = pts @ extr.R.T + extr.translation
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        xz = cam[:, 0] / z
        yz = cam[:, 1] / z
    pix = np.stack([intr.fx * xz + intr.skew * yz + intr.cx, intr.fy * yz + intr.cy], axis=1)
    pix[z <= 0] = np.nan
    return pix, z


def project_point(intr: CameraIntrinsics, extr: CameraExtrinsics, world_point) -> Projection:
    pix, z = project_points(intr, extr, world_point)
    return Projection(pix[0], float(z[0]), bool(z[0] <= 0))


# -- COLMAP text model ---------------------------------------------------------


def _fmt(x) -> str:
    s = repr(float(x) + 0.0)
    return s[:-2] if s.endswith(".0") else s


def export_colmap_model(cameras: CameraSet, points, out_dir) -> list[Path]:
    """Write cameras.txt, images.txt and points3D.txt.

    ``points`` is a PlenopticPointCloud (colors averaged over views) or None.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    intr_ids: dict[CameraIntrinsics, int] = {}
    for cam in cameras:
        if cam.intrinsics.skew != 0:
            raise UnsupportedCameraModelError("PINHOLE export requires zero skew")
        intr_ids.setdefault(cam.intrinsics, len(intr_ids) + 1)

    cam_lines = ["# Camera list with one line of data per camera:",
                 "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]",
                 f"# Number of cameras: {len(intr_ids)}"]
    for intr, cid in intr_ids.items():
        cam_lines.append(" ".join([str(cid), "PINHOLE", str(intr.width), str(intr.height),
                                   *map(_fmt, (intr.fx, intr.fy, intr.cx, intr.cy))]))

    img_lines = ["# Image list with two lines of data per image:",
                 "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME",
                 "#   POINTS2D[] as (X, Y, POINT3D_ID)",
                 f"# Number of images: {len(cameras)}, mean observations per image: 0"]
    for cam in cameras:
        e = cam.extrinsics
        img_lines.append(" ".join([str(cam.id), *map(_fmt, e.rotation), *map(_fmt, e.translation),
                                   str(intr_ids[cam.intrinsics]), cam.image_name]))
        img_lines.append("")

    n = 0 if points is None else points.point_count
    pt_lines = ["# 3D point list with one line of data per point:",
                "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)",
                f"# Number of points: {n}, mean track length: 0"]
    if n:
        rgb = np.rint(points.mean_colors() * 255.0).astype(int)
        for k in range(n):
            x, y, z = points.positions[k]
            pt_lines.append(f"{k + 1} {_fmt(x)} {_fmt(y)} {_fmt(z)} {rgb[k, 0]} {rgb[k, 1]} {rgb[k, 2]} 0")

    written = []
    for name, lines in (("cameras.txt", cam_lines), ("images.txt", img_lines), ("points3D.txt", pt_lines)):
        path = out / name
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    return written


def _data_lines(path):
    if not os.path.exists(path):
        raise ColmapParseError(path, 0, "file not found")
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if line and not line.startswith("#"):
                yield lineno, line.split()


def import_colmap_points(model_dir) -> tuple[np.ndarray, np.ndarray]:
    """Read points3D.txt -> (positions (N,3), colors (N,3) in [0, 1])."""
    path = Path(model_dir) / "points3D.txt"
    xyz, rgb = [], []
    for lineno, f in _data_lines(path):
        if len(f) < 8 or (len(f) - 8) % 2:
            raise ColmapParseError(path, lineno, f"expected 8 fields plus track pairs, got {len(f)}")
        try:
            xyz.append([float(v) for v in f[1:4]])
            rgb.append([int(v) for v in f[4:7]])
        except ValueError as exc:
            raise ColmapParseError(path, lineno, str(exc)) from None
    pos = np.array(xyz, dtype=np.float64).reshape(-1, 3)
    col = np.array(rgb, dtype=np.float64).reshape(-1, 3) / 255.0
    return pos, col


def import_colmap_cameras(model_dir) -> CameraSet:
    """Read cameras.txt + images.txt back into a CameraSet."""
    model_dir = Path(model_dir)
    intr: dict[int, CameraIntrinsics] = {}
    cpath = model_dir / "cameras.txt"
    for lineno, f in _data_lines(cpath):
        try:
            cid, model, w, h = int(f[0]), f[1], int(f[2]), int(f[3])
            params = [float(v) for v in f[4:]]
        except (ValueError, IndexError) as exc:
            raise ColmapParseError(cpath, lineno, str(exc)) from None
        if model == "PINHOLE" and len(params) == 4:
            intr[cid] = CameraIntrinsics(params[0], params[1], params[2], params[3], w, h)
        elif model == "SIMPLE_PINHOLE" and len(params) == 3:
            intr[cid] = CameraIntrinsics(params[0], params[0], params[1], params[2], w, h)
        else:
            raise ColmapParseError(cpath, lineno, f"unsupported camera model {model}")

    ipath = model_dir / "images.txt"
    cams = []
    expect_points = False
    with open(ipath) as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.startswith("#"):
                continue
            if expect_points:
                expect_points = False
                continue
            f = line.split()
            if not f:
                continue
            if len(f) != 10:
                raise ColmapParseError(ipath, lineno, f"expected 10 fields, got {len(f)}")
            try:
                iid = int(f[0])
                q = np.array([float(v) for v in f[1:5]])
                t = np.array([float(v) for v in f[5:8]])
                cid = int(f[8])
            except ValueError as exc:
                raise ColmapParseError(ipath, lineno, str(exc)) from None
            if cid not in intr:
                raise ColmapParseError(ipath, lineno, f"unknown camera id {cid}")
            extr = CameraExtrinsics(q / np.linalg.norm(q), t)
            R = extr.R
            pose = ViewportPose(extr.center, -R[1], R[2])
            cams.append(Camera(iid, intr[cid], extr, pose, f[9]))
            expect_points = True
    return CameraSet(cams)
