"""Plenoptic point clouds and meshes: PLY I/O, surface sampling, synthetic assets.

A plenoptic point stores one RGB triplet per capture camera, so a cloud of
``N_p`` points seen by ``N_c`` cameras carries an ``(N_p, N_c, 3)`` color
tensor. Colors live in [0, 1] in memory and are quantized to 8 bits only
when written to disk.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

import numpy as np

from ._ply import PlyElement, PlyFormatError, PlyProperty, header_bytes, read_ply

__all__ = [
    "PlyFormatError",
    "InconsistentViewAttributesError",
    "ColorNaming",
    "PlenopticPointCloud",
    "PlenopticMesh",
    "SampleKind",
    "SurfaceSampleMode",
    "Material",
    "parse_plenoptic_ply",
    "write_plenoptic_ply",
    "surface_samples",
    "synth_plenoptic",
    "load_plenoptic",
    "save_plenoptic",
]


class InconsistentViewAttributesError(PlyFormatError):
    """A per-view color channel is present for some views but not others."""


@dataclass(frozen=True)
class ColorNaming:
    """How per-view color properties are named in the vertex element.

    ``pattern`` must contain ``{channel}`` and ``{index}``; ``channels`` gives
    the names substituted for R, G and B.
    """

    pattern: str = "{channel}_{index}"
    channels: tuple[str, str, str] = ("red", "green", "blue")

    def name(self, channel: int, index: int) -> str:
        return self.pattern.format(channel=self.channels[channel], index=index)

    def regex(self) -> re.Pattern:
        parts = re.split(r"(\{channel\}|\{index\})", self.pattern)
        out = []
        for part in parts:
            if part == "{channel}":
                out.append("(?P<channel>" + "|".join(map(re.escape, self.channels)) + ")")
            elif part == "{index}":
                out.append(r"(?P<index>\d+)")
            else:
                out.append(re.escape(part))
        return re.compile("^" + "".join(out) + "$")


DEFAULT_NAMING = ColorNaming()


@dataclass(eq=False)
class PlenopticPointCloud:
    """Points with one RGB color per capture view.

    positions are float32 (the on-disk precision) so that PLY round-trips are
    bit-exact; view_colors are float64 in [0, 1].
    """

    positions: np.ndarray
    view_colors: np.ndarray
    capture_camera_positions: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float32).reshape(-1, 3)
        colors = np.asarray(self.view_colors, dtype=np.float64)
        if colors.ndim != 3 or colors.shape[2] != 3:
            raise ValueError(f"view_colors must be (N_p, N_c, 3), got {colors.shape}")
        if colors.shape[0] != self.positions.shape[0]:
            raise ValueError("view_colors and positions disagree on point count")
        if colors.shape[1] < 1:
            raise ValueError("need at least one view color per point")
        if colors.size and (np.nanmin(colors) < 0.0 or np.nanmax(colors) > 1.0 or np.isnan(colors).any()):
            raise ValueError("colors must lie in [0, 1]")
        self.view_colors = np.ascontiguousarray(colors)
        if self.capture_camera_positions is not None:
            cams = np.ascontiguousarray(self.capture_camera_positions, dtype=np.float64).reshape(-1, 3)
            if cams.shape[0] != colors.shape[1]:
                raise ValueError(
                    f"{cams.shape[0]} capture cameras for {colors.shape[1]} color views"
                )
            self.capture_camera_positions = cams

    @property
    def point_count(self) -> int:
        return self.positions.shape[0]

    @property
    def n_views(self) -> int:
        return self.view_colors.shape[1]

    def color_bytes(self) -> np.ndarray:
        return np.rint(self.view_colors * 255.0).astype(np.uint8)

    def mean_colors(self) -> np.ndarray:
        return self.view_colors.mean(axis=1)

    def subset(self, idx) -> "PlenopticPointCloud":
        return PlenopticPointCloud(
            self.positions[idx], self.view_colors[idx], self.capture_camera_positions
        )

    def __eq__(self, other):
        if not isinstance(other, PlenopticPointCloud):
            return NotImplemented
        if self.positions.shape != other.positions.shape or self.n_views != other.n_views:
            return False
        if self.positions.tobytes() != other.positions.tobytes():
            return False
        if not np.array_equal(self.color_bytes(), other.color_bytes()):
            return False
        a, b = self.capture_camera_positions, other.capture_camera_positions
        if (a is None) != (b is None):
            return False
        return a is None or a.tobytes() == b.tobytes()


@dataclass(eq=False)
class PlenopticMesh:
    vertices: PlenopticPointCloud
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int64))

    def __post_init__(self):
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        n = self.vertices.point_count
        if faces.size and (faces.min() < 0 or faces.max() >= n):
            raise ValueError(f"face index out of range for {n} vertices")
        if faces.size and (
            (faces[:, 0] == faces[:, 1]).any()
            or (faces[:, 1] == faces[:, 2]).any()
            or (faces[:, 0] == faces[:, 2]).any()
        ):
            raise ValueError("degenerate face (repeated vertex index)")
        self.faces = faces

    @property
    def face_count(self) -> int:
        return self.faces.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PlenopticMesh):
            return NotImplemented
        return self.vertices == other.vertices and np.array_equal(self.faces, other.faces)


class SampleKind(enum.Enum):
    VERTICES = "vertices"
    FACE_CENTERS = "face-centers"
    BOTH = "both"


@dataclass(frozen=True)
class SurfaceSampleMode:
    kind: SampleKind = SampleKind.VERTICES
    subset_fraction: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.subset_fraction <= 1.0:
            raise ValueError(f"subset_fraction must be in (0, 1], got {self.subset_fraction}")


# -- PLY -------------------------------------------------------------------


def _view_columns(names: list[str], naming: ColorNaming) -> int:
    """Return N_c implied by the vertex property names."""
    rx = naming.regex()
    seen: dict[str, set[int]] = {c: set() for c in naming.channels}
    for name in names:
        m = rx.match(name)
        if m:
            seen[m.group("channel")].add(int(m.group("index")))
    all_idx = set().union(*seen.values())
    if not all_idx:
        return 0
    for ch, idx in seen.items():
        missing = sorted(all_idx - idx)
        if missing:
            raise InconsistentViewAttributesError(
                f"view {missing[0]} has no {naming.name(naming.channels.index(ch), missing[0])!r} property"
            )
    n_c = max(all_idx) + 1
    if len(all_idx) != n_c:
        gap = min(set(range(n_c)) - all_idx)
        raise InconsistentViewAttributesError(f"view index {gap} missing (found up to {n_c - 1})")
    return n_c


def parse_plenoptic_ply(data: bytes, naming: ColorNaming = DEFAULT_NAMING):
    """Parse a plenoptic PLY into a cloud, or a mesh if a face element exists.

    Plain ``red/green/blue`` vertex colors without view indices are read as a
    single-view cloud. Capture camera positions are read from an optional
    ``camera`` element with x, y, z properties.
    """
    header, els = read_ply(data)
    vel = header.element("vertex")
    if vel is None:
        raise PlyFormatError("no vertex element")
    if vel.has_lists:
        raise PlyFormatError("vertex element must not carry list properties")
    verts = els["vertex"]
    names = [p.name for p in vel.properties]
    for axis in "xyz":
        if axis not in names:
            raise PlyFormatError(f"vertex element lacks {axis!r}")
    positions = np.stack([verts["x"], verts["y"], verts["z"]], axis=1)

    n_c = _view_columns(names, naming)
    if n_c:
        raw = np.stack(
            [np.stack([verts[naming.name(c, k)] for c in range(3)], axis=1) for k in range(n_c)],
            axis=1,
        )
    elif all(c in names for c in naming.channels):
        raw = np.stack([verts[c] for c in naming.channels], axis=1)[:, None, :]
    else:
        raise PlyFormatError("no per-view color properties found")
    if raw.dtype.kind in "ui":
        colors = raw.astype(np.float64) / 255.0
    else:
        colors = raw.astype(np.float64)
    if colors.size and (colors.min() < 0 or colors.max() > 1):
        raise PlyFormatError("color values outside the 8-bit range")

    cams = None
    cel = header.element("camera")
    if cel is not None:
        c = els["camera"]
        cams = np.stack([c["x"], c["y"], c["z"]], axis=1).astype(np.float64)
        if cams.shape[0] != colors.shape[1]:
            raise PlyFormatError(f"{cams.shape[0]} cameras but {colors.shape[1]} color views")

    cloud = PlenopticPointCloud(positions, colors, cams)
    fel = header.element("face")
    if fel is None:
        return cloud
    faces_col = els["face"]
    key = next((k for k in ("vertex_indices", "vertex_index") if k in faces_col), None)
    if key is None:
        raise PlyFormatError("face element lacks vertex_indices")
    tris = []
    for poly in faces_col[key]:
        poly = np.asarray(poly, dtype=np.int64)
        if poly.size < 3:
            raise PlyFormatError("face with fewer than three vertices")
        for k in range(1, poly.size - 1):
            tris.append((poly[0], poly[k], poly[k + 1]))
    faces = np.array(tris, dtype=np.int64).reshape(-1, 3)
    if faces.size and (faces.min() < 0 or faces.max() >= cloud.point_count):
        raise PlyFormatError(f"face index out of range for {cloud.point_count} vertices")
    return PlenopticMesh(cloud, faces)


def write_plenoptic_ply(model, naming: ColorNaming = DEFAULT_NAMING) -> bytes:
    """Serialize a cloud (or mesh) as binary little-endian PLY."""
    if isinstance(model, PlenopticMesh):
        cloud, faces = model.vertices, model.faces
    else:
        cloud, faces = model, None
    props = [PlyProperty(a, "f4") for a in "xyz"]
    for k in range(cloud.n_views):
        props += [PlyProperty(naming.name(c, k), "u1") for c in range(3)]
    elements = [PlyElement("vertex", cloud.point_count, props)]
    if cloud.capture_camera_positions is not None:
        elements.append(
            PlyElement("camera", cloud.n_views, [PlyProperty(a, "f8") for a in "xyz"])
        )
    if faces is not None:
        elements.append(
            PlyElement("face", faces.shape[0], [PlyProperty("vertex_indices", "i4", "u1")])
        )

    vdt = np.dtype([(p.name, "<" + p.dtype) for p in props])
    vert = np.empty(cloud.point_count, dtype=vdt)
    vert["x"], vert["y"], vert["z"] = cloud.positions.T
    cb = cloud.color_bytes()
    for k in range(cloud.n_views):
        for c in range(3):
            vert[naming.name(c, k)] = cb[:, k, c]
    chunks = [header_bytes(elements), vert.tobytes()]
    if cloud.capture_camera_positions is not None:
        chunks.append(cloud.capture_camera_positions.astype("<f8").tobytes())
    if faces is not None:
        fdt = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
        frec = np.empty(faces.shape[0], dtype=fdt)
        frec["n"] = 3
        frec["idx"] = faces
        chunks.append(frec.tobytes())
    return b"".join(chunks)


def load_plenoptic(path, naming: ColorNaming = DEFAULT_NAMING):
    with open(path, "rb") as fh:
        return parse_plenoptic_ply(fh.read(), naming)


def save_plenoptic(model, path, naming: ColorNaming = DEFAULT_NAMING) -> None:
    with open(path, "wb") as fh:
        fh.write(write_plenoptic_ply(model, naming))


# -- sampling --------------------------------------------------------------


def _subset_count(n: int, fraction: float) -> int:
    if n == 0:
        return 0
    return max(1, int(np.floor(n * fraction)))


def surface_samples(mesh, mode: SurfaceSampleMode = SurfaceSampleMode(), seed: int = 0) -> PlenopticPointCloud:
    """Pick initialization points on a mesh surface.

    Face centers carry the per-view mean of their three vertex colors. With
    ``subset_fraction < 1`` a seeded uniform subset is kept, in input order.
    A bare point cloud is accepted and treated as a mesh without faces.
    """
    if isinstance(mesh, PlenopticPointCloud):
        mesh = PlenopticMesh(mesh)
    v = mesh.vertices
    parts_pos, parts_col = [], []
    if mode.kind in (SampleKind.VERTICES, SampleKind.BOTH):
        parts_pos.append(v.positions)
        parts_col.append(v.view_colors)
    if mode.kind in (SampleKind.FACE_CENTERS, SampleKind.BOTH):
        f = mesh.faces
        tri = v.positions.astype(np.float64)[f]
        parts_pos.append((tri.sum(axis=1) / 3.0).astype(np.float32))
        parts_col.append(v.view_colors[f].mean(axis=1))
    pos = np.concatenate(parts_pos, axis=0)
    col = np.concatenate(parts_col, axis=0)
    n = pos.shape[0]
    k = _subset_count(n, mode.subset_fraction)
    if k < n:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(n, size=k, replace=False))
        pos, col = pos[idx], col[idx]
    return PlenopticPointCloud(pos, col, v.capture_camera_positions)


# -- synthetic assets --------------------------------------------------------


@dataclass(frozen=True)
class Material:
    """Constant base color plus a Phong-style specular lobe.

    ``light_dir`` points from the surface toward a distant light.
    """

    base_color: tuple[float, float, float] = (0.6, 0.4, 0.2)
    specular_strength: float = 0.5
    shininess: float = 8.0
    light_dir: tuple[float, float, float] = (0.0, 1.0, 1.0)

    def __post_init__(self):
        if not 0.0 <= self.specular_strength <= 1.0:
            raise ValueError("specular_strength must be in [0, 1]")
        if self.shininess <= 0:
            raise ValueError("shininess must be positive")


def _sphere_surface(n, rng, size):
    p = rng.standard_normal((n, 3))
    normals = p / np.linalg.norm(p, axis=1, keepdims=True)
    return normals * size, normals


def _cube_surface(n, rng, size):
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-size, size, size=(n, 2))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    pts = np.empty((n, 3))
    normals = np.zeros((n, 3))
    rows = np.arange(n)
    other = np.array([[1, 2], [0, 2], [0, 1]])[axis]
    pts[rows, axis] = sign * size
    pts[rows, other[:, 0]] = uv[:, 0]
    pts[rows, other[:, 1]] = uv[:, 1]
    normals[rows, axis] = sign
    return pts, normals


def specular_colors(points, normals, cameras, material: Material) -> np.ndarray:
    """Evaluate the synthetic material for every (point, camera) pair."""
    light = np.asarray(material.light_dir, dtype=np.float64)
    light = light / np.linalg.norm(light)
    refl = 2.0 * (normals @ light)[:, None] * normals - light
    to_cam = np.asarray(cameras, dtype=np.float64)[None, :, :] - points[:, None, :]
    to_cam /= np.linalg.norm(to_cam, axis=2, keepdims=True)
    cos = np.einsum("pk,pck->pc", refl, to_cam)
    lobe = np.maximum(cos, 0.0) ** material.shininess
    color = np.asarray(material.base_color, dtype=np.float64) + material.specular_strength * lobe[..., None]
    return np.clip(color, 0.0, 1.0)


def synth_plenoptic(shape: str, n_points: int, cameras, material: Material = Material(),
                    seed: int = 0, size: float = 1.0) -> PlenopticPointCloud:
    """Sample a sphere (radius ``size``) or cube (half-extent ``size``) at the
    origin and color it per capture camera with ``material``."""
    if n_points <= 0:
        raise ValueError("n_points must be positive")
    cams = np.asarray(cameras, dtype=np.float64).reshape(-1, 3)
    if cams.shape[0] < 1:
        raise ValueError("need at least one camera")
    rng = np.random.default_rng(seed)
    shape = shape.lower()
    if shape == "sphere":
        pts, normals = _sphere_surface(n_points, rng, size)
    elif shape == "cube":
        pts, normals = _cube_surface(n_points, rng, size)
    else:
        raise ValueError(f"unknown shape {shape!r}")
    # color from the stored (float32) positions so files reproduce exactly
    pts32 = pts.astype(np.float32)
    colors = specular_colors(pts32.astype(np.float64), normals, cams, material)
    return PlenopticPointCloud(pts32, colors, cams)
