"""Gaussian splat parameters, covariance math, SH color and the 3DGS PLY layout."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ._ply import PlyElement, PlyFormatError, PlyProperty, header_bytes, read_ply
from .camera_rig import CameraExtrinsics, CameraIntrinsics

LOWPASS_BLUR = 0.3  # px^2 added to every projected covariance
MAX_SH_DEGREE = 3

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)


class GsFormatError(PlyFormatError):
    pass


class BehindCameraError(ValueError):
    pass


def sh_count(degree: int) -> int:
    return (degree + 1) ** 2


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    return np.log(p) - np.log1p(-p)


@dataclass(eq=False)
class GaussianModel:
    """Struct-of-arrays splat collection.

    Arrays: means (N, 3), log_scales (N, 3), rotations (N, 4) as unnormalized
    (w, x, y, z), opacity_logits (N,), sh (N, (deg+1)^2, 3).
    """

    means: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    sh_degree: int = 3
    frozen_positions: bool = False

    PARAM_GROUPS = ("means", "log_scales", "rotations", "opacity_logits", "sh")

    def __post_init__(self):
        if not 0 <= self.sh_degree <= MAX_SH_DEGREE:
            raise ValueError(f"sh_degree must be in 0..{MAX_SH_DEGREE}")
        n = np.asarray(self.means).reshape(-1, 3).shape[0]
        self.means = np.asarray(self.means, dtype=np.float64).reshape(n, 3)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.sh = np.asarray(self.sh, dtype=np.float64).reshape(n, sh_count(self.sh_degree), 3)

    def __len__(self) -> int:
        return self.means.shape[0]

    @classmethod
    def empty(cls, sh_degree: int = 3) -> "GaussianModel":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0),
                   np.zeros((0, sh_count(sh_degree), 3)), sh_degree)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def params(self) -> dict[str, np.ndarray]:
        return {g: getattr(self, g) for g in self.PARAM_GROUPS}

    def copy(self) -> "GaussianModel":
        return GaussianModel(**{g: a.copy() for g, a in self.params().items()},
                             sh_degree=self.sh_degree, frozen_positions=self.frozen_positions)

    def select(self, idx) -> "GaussianModel":
        return GaussianModel(**{g: a[idx] for g, a in self.params().items()},
                             sh_degree=self.sh_degree, frozen_positions=self.frozen_positions)

    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for a in self.params().values():
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, GaussianModel):
            return NotImplemented
        if (self.sh_degree, self.frozen_positions, len(self)) != (other.sh_degree, other.frozen_positions, len(other)):
            return False
        return all(a.tobytes() == b.tobytes() for a, b in zip(self.params().values(), other.params().values()))


# -- geometry ----------------------------------------------------------------


def quats_to_rotmats(q: np.ndarray) -> np.ndarray:
    """(N, 4) (w, x, y, z), normalized internally -> (N, 3, 3)."""
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def covariances_3d(log_scales: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    R = quats_to_rotmats(rotations)
    M = R * np.exp(log_scales)[..., None, :]
    return M @ np.swapaxes(M, -1, -2)


def covariance_3d(log_scale, rotation) -> np.ndarray:
    """Sigma = R diag(exp(log_scale)^2) R^T for one splat."""
    return covariances_3d(np.asarray(log_scale, dtype=np.float64)[None],
                          np.asarray(rotation, dtype=np.float64)[None])[0]


def projection_jacobians(t_cam: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """d(pixel)/d(camera-space point), (N, 2, 3)."""
    x, y, z = t_cam[:, 0], t_cam[:, 1], t_cam[:, 2]
    iz = 1.0 / z
    J = np.zeros((t_cam.shape[0], 2, 3))
    J[:, 0, 0] = intr.fx * iz
    J[:, 0, 1] = intr.skew * iz
    J[:, 0, 2] = -(intr.fx * x + intr.skew * y) * iz * iz
    J[:, 1, 1] = intr.fy * iz
    J[:, 1, 2] = -intr.fy * y * iz * iz
    return J


def project_covariance_2d(cov3, mean, extr: CameraExtrinsics, intr: CameraIntrinsics) -> np.ndarray:
    """EWA screen-space covariance J W Sigma W^T J^T + blur * I."""
    W = extr.R
    t = W @ np.asarray(mean, dtype=np.float64) + extr.translation
    if t[2] <= 0:
        raise BehindCameraError("splat mean is not in front of the camera")
    T = projection_jacobians(t[None], intr)[0] @ W
    return T @ np.asarray(cov3, dtype=np.float64) @ T.T + LOWPASS_BLUR * np.eye(2)


# -- spherical harmonics -------------------------------------------------------


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis (3DGS sign convention), (N, 3) -> (N, (deg+1)^2)."""
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    out = [np.full_like(x, SH_C0)]
    if degree >= 1:
        out += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [SH_C2[0] * x * y, SH_C2[1] * y * z, SH_C2[2] * (2 * zz - xx - yy),
                SH_C2[3] * x * z, SH_C2[4] * (xx - yy)]
    if degree >= 3:
        out += [SH_C3[0] * y * (3 * xx - yy), SH_C3[1] * x * y * z,
                SH_C3[2] * y * (4 * zz - xx - yy), SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
                SH_C3[4] * x * (4 * zz - xx - yy), SH_C3[5] * z * (xx - yy),
                SH_C3[6] * x * (xx - 3 * yy)]
    return np.stack(out, axis=1)


def sh_basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d basis / d dir, (N, K, 3)."""
    n = dirs.shape[0]
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    g = np.zeros((n, sh_count(degree), 3))
    if degree >= 1:
        g[:, 1, 1] = -SH_C1
        g[:, 2, 2] = SH_C1
        g[:, 3, 0] = -SH_C1
    if degree >= 2:
        c = SH_C2
        g[:, 4] = np.stack([c[0] * y, c[0] * x, 0 * x], 1)
        g[:, 5] = np.stack([0 * x, c[1] * z, c[1] * y], 1)
        g[:, 6] = np.stack([-2 * c[2] * x, -2 * c[2] * y, 4 * c[2] * z], 1)
        g[:, 7] = np.stack([c[3] * z, 0 * x, c[3] * x], 1)
        g[:, 8] = np.stack([2 * c[4] * x, -2 * c[4] * y, 0 * x], 1)
    if degree >= 3:
        c = SH_C3
        xx, yy, zz = x * x, y * y, z * z
        g[:, 9] = np.stack([6 * c[0] * x * y, c[0] * (3 * xx - 3 * yy), 0 * x], 1)
        g[:, 10] = np.stack([c[1] * y * z, c[1] * x * z, c[1] * x * y], 1)
        g[:, 11] = np.stack([-2 * c[2] * x * y, c[2] * (4 * zz - xx - 3 * yy), 8 * c[2] * y * z], 1)
        g[:, 12] = np.stack([-6 * c[3] * x * z, -6 * c[3] * y * z, c[3] * (6 * zz - 3 * xx - 3 * yy)], 1)
        g[:, 13] = np.stack([c[4] * (4 * zz - 3 * xx - yy), -2 * c[4] * x * y, 8 * c[4] * x * z], 1)
        g[:, 14] = np.stack([2 * c[5] * x * z, -2 * c[5] * y * z, c[5] * (xx - yy)], 1)
        g[:, 15] = np.stack([c[6] * (3 * xx - 3 * yy), -6 * c[6] * x * y, 0 * x], 1)
    return g


def eval_sh_colors(sh: np.ndarray, degree: int, dirs: np.ndarray) -> np.ndarray:
    """Batch version of eval_sh_color: sh (N, K, 3), dirs (N, 3) -> (N, 3)."""
    basis = sh_basis(dirs, degree)
    raw = np.einsum("nk,nkc->nc", basis, sh[:, : sh_count(degree)])
    return np.clip(raw + 0.5, 0.0, 1.0)


def eval_sh_color(sh_coeffs, degree: int, view_dir) -> np.ndarray:
    d = np.asarray(view_dir, dtype=np.float64).reshape(1, 3)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("view_dir must be a unit vector")
    sh = np.asarray(sh_coeffs, dtype=np.float64).reshape(1, -1, 3)
    return eval_sh_colors(sh, degree, d)[0]


def rgb_to_sh_dc(rgb):
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


# -- 3DGS PLY ----------------------------------------------------------------


def _gs_property_names(degree: int) -> list[str]:
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(3 * (sh_count(degree) - 1))]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    return names


FROZEN_COMMENT = "frozen_positions"


def export_gs_ply(model: GaussianModel) -> bytes:
    """Binary little-endian PLY in the usual 3DGS property order (float32)."""
    names = _gs_property_names(model.sh_degree)
    n = len(model)
    k = sh_count(model.sh_degree)
    table = np.zeros((n, len(names)), dtype="<f4")
    table[:, 0:3] = model.means
    table[:, 6:9] = model.sh[:, 0, :]
    # f_rest is channel-major: all R coefficients, then G, then B
    table[:, 9:9 + 3 * (k - 1)] = np.transpose(model.sh[:, 1:, :], (0, 2, 1)).reshape(n, 3 * (k - 1))
    o = 9 + 3 * (k - 1)
    table[:, o] = model.opacity_logits
    table[:, o + 1:o + 4] = model.log_scales
    table[:, o + 4:o + 8] = model.rotations
    comments = [FROZEN_COMMENT] if model.frozen_positions else []
    header = header_bytes([PlyElement("vertex", n, [PlyProperty(p, "f4") for p in names])], comments)
    return header + table.tobytes()


def import_gs_ply(data: bytes) -> GaussianModel:
    header, els = read_ply(data)
    vel = header.element("vertex")
    if vel is None or vel.has_lists:
        raise GsFormatError("missing or malformed vertex element")
    names = [p.name for p in vel.properties]
    n_rest = sum(1 for p in names if p.startswith("f_rest_"))
    degree = next((d for d in range(MAX_SH_DEGREE + 1) if 3 * (sh_count(d) - 1) == n_rest), None)
    if degree is None:
        raise GsFormatError(f"{n_rest} f_rest properties do not match any SH degree")
    if names != _gs_property_names(degree):
        raise GsFormatError("unexpected 3DGS property layout")
    if any(p.dtype != "f4" for p in vel.properties):
        raise GsFormatError("3DGS properties must be float32")
    v = els["vertex"]
    n = vel.count
    table = np.stack([v[p] for p in names], axis=1).astype(np.float64) if n else np.zeros((0, len(names)))
    k = sh_count(degree)
    sh = np.empty((n, k, 3))
    sh[:, 0, :] = table[:, 6:9]
    sh[:, 1:, :] = table[:, 9:9 + 3 * (k - 1)].reshape(n, 3, k - 1).transpose(0, 2, 1)
    o = 9 + 3 * (k - 1)
    return GaussianModel(
        means=table[:, 0:3], log_scales=table[:, o + 1:o + 4], rotations=table[:, o + 4:o + 8],
        opacity_logits=table[:, o], sh=sh, sh_degree=degree,
        frozen_positions=FROZEN_COMMENT in header.comments,
    )


def save_gs_ply(model: GaussianModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(export_gs_ply(model))


def load_gs_ply(path) -> GaussianModel:
    with open(path, "rb") as fh:
        return import_gs_ply(fh.read())
