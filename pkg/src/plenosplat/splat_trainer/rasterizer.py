"""Exact-sort alpha compositing of projected Gaussians, forward and backward.

Every (splat, pixel) pair inside a splat's 3-sigma screen box becomes one
row of a flat "fragment" table. Fragments are generated in global depth
order and then stably grouped by pixel, so each pixel's run of rows is its
front-to-back contribution list. Transmittance and the backward suffix
sums are segmented prefix operations over those runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..camera_rig import CameraExtrinsics, CameraIntrinsics
from ..gaussian_model import (
    LOWPASS_BLUR,
    GaussianModel,
    projection_jacobians,
    quats_to_rotmats,
    sh_basis,
    sh_basis_grad,
    sh_count,
    sigmoid,
)
from ..view_renderer import Image

NEAR_PLANE = 0.01
ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.999


class StaleCacheError(RuntimeError):
    """backward was called with a cache from a model that has since changed."""


@dataclass
class SplatGrads:
    means: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    means2d: np.ndarray  # screen-space mean gradient, feeds densification stats

    def as_dict(self) -> dict[str, np.ndarray]:
        return {g: getattr(self, g) for g in GaussianModel.PARAM_GROUPS}


@dataclass
class RenderCache:
    fingerprint: str
    n_splats: int
    width: int
    height: int
    background: np.ndarray
    cam_center: np.ndarray
    W: np.ndarray
    intr: CameraIntrinsics
    # per visible splat (index into the model: vis)
    vis: np.ndarray
    t_cam: np.ndarray
    J: np.ndarray
    R: np.ndarray
    scales: np.ndarray
    cov3: np.ndarray
    T: np.ndarray
    conic: np.ndarray
    opac: np.ndarray
    dirs: np.ndarray
    dist: np.ndarray
    basis: np.ndarray
    color: np.ndarray
    color_mask: np.ndarray
    q_raw: np.ndarray
    sh_vis: np.ndarray
    sh_degree: int
    # per fragment, grouped by pixel and depth-ordered inside each pixel
    frag_splat: np.ndarray  # index into vis arrays
    frag_pixel: np.ndarray
    frag_dx: np.ndarray
    frag_dy: np.ndarray
    frag_alpha: np.ndarray
    frag_clamped: np.ndarray
    frag_T: np.ndarray
    T_final: np.ndarray  # (H*W,)

    def weight_sum(self) -> np.ndarray:
        """Per-pixel sum of alpha*T plus the final transmittance (should be 1)."""
        s = np.bincount(self.frag_pixel, weights=self.frag_alpha * self.frag_T,
                        minlength=self.width * self.height)
        return (s + self.T_final).reshape(self.height, self.width)


def _segment_starts(keys: np.ndarray) -> np.ndarray:
    start = np.ones(keys.size, dtype=bool)
    start[1:] = keys[1:] != keys[:-1]
    return start


def forward_render(model: GaussianModel, intr: CameraIntrinsics, extr: CameraExtrinsics,
                   background=(0.0, 0.0, 0.0)) -> tuple[Image, RenderCache]:
    Wd, Ht = intr.width, intr.height
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    Wm = extr.R
    cam_center = extr.center
    deg = model.sh_degree

    t_all = model.means @ Wm.T + extr.translation
    vis = np.flatnonzero(t_all[:, 2] > NEAR_PLANE)
    t_cam = t_all[vis]
    J = projection_jacobians(t_cam, intr)
    R = quats_to_rotmats(model.rotations[vis])
    scales = np.exp(model.log_scales[vis])
    M = R * scales[:, None, :]
    cov3 = M @ np.swapaxes(M, 1, 2)
    T = J @ Wm
    cov2 = T @ cov3 @ np.swapaxes(T, 1, 2)
    cov2[:, 0, 0] += LOWPASS_BLUR
    cov2[:, 1, 1] += LOWPASS_BLUR
    a, b, c = cov2[:, 0, 0], cov2[:, 0, 1], cov2[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    iz = 1.0 / t_cam[:, 2]
    mx = (intr.fx * t_cam[:, 0] + intr.skew * t_cam[:, 1]) * iz + intr.cx
    my = intr.fy * t_cam[:, 1] * iz + intr.cy
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = np.ceil(3.0 * np.sqrt(lam))

    x0 = np.maximum(np.ceil(mx - radius), 0).astype(np.int64)
    x1 = np.minimum(np.floor(mx + radius), Wd - 1).astype(np.int64)
    y0 = np.maximum(np.ceil(my - radius), 0).astype(np.int64)
    y1 = np.minimum(np.floor(my + radius), Ht - 1).astype(np.int64)
    wx = np.maximum(x1 - x0 + 1, 0)
    wy = np.maximum(y1 - y0 + 1, 0)
    on_screen = (wx > 0) & (wy > 0)

    keep = np.flatnonzero(on_screen)
    vis, t_cam, J, R, scales, cov3, T, conic = (
        vis[keep], t_cam[keep], J[keep], R[keep], scales[keep], cov3[keep], T[keep], conic[keep])
    mx, my, x0, y0, wx, wy = mx[keep], my[keep], x0[keep], y0[keep], wx[keep], wy[keep]

    opac = sigmoid(model.opacity_logits[vis])
    diff = model.means[vis] - cam_center
    dist = np.linalg.norm(diff, axis=1)
    dirs = diff / dist[:, None]
    basis = sh_basis(dirs, deg)
    raw = np.einsum("nk,nkc->nc", basis, model.sh[vis, : sh_count(deg)]) + 0.5
    color_mask = (raw > 0.0) & (raw < 1.0)
    color = np.clip(raw, 0.0, 1.0)

    # fragments in depth order (stable: equal depths keep model order)
    order = np.argsort(t_cam[:, 2], kind="stable")
    counts = (wx * wy)[order]
    total = int(counts.sum())
    frag_splat = np.repeat(order, counts)
    starts = np.cumsum(counts) - counts
    local = np.arange(total, dtype=np.int64) - np.repeat(starts, counts)
    fw = wx[frag_splat]
    px = x0[frag_splat] + local % fw
    py = y0[frag_splat] + local // fw
    dx = px - mx[frag_splat]
    dy = py - my[frag_splat]
    cA, cB, cC = conic[frag_splat, 0], conic[frag_splat, 1], conic[frag_splat, 2]
    power = -0.5 * (cA * dx * dx + cC * dy * dy) - cB * dx * dy
    alpha = opac[frag_splat] * np.exp(np.minimum(power, 0.0))
    live = (power <= 0.0) & (alpha >= ALPHA_MIN)
    frag_splat, px, py, dx, dy, alpha = (
        frag_splat[live], px[live], py[live], dx[live], dy[live], alpha[live])
    clamped = alpha > ALPHA_MAX
    alpha = np.minimum(alpha, ALPHA_MAX)
    pixel = py * Wd + px

    grp = np.argsort(pixel, kind="stable")
    frag_splat, pixel, dx, dy, alpha, clamped = (
        frag_splat[grp], pixel[grp], dx[grp], dy[grp], alpha[grp], clamped[grp])

    log1m = np.log1p(-alpha)
    cs = np.cumsum(log1m)
    seg_start = _segment_starts(pixel)
    seg_id = np.cumsum(seg_start) - 1
    excl = cs - log1m
    base = excl[seg_start]
    frag_T = np.exp(excl - base[seg_id])

    npix = Wd * Ht
    T_final = np.ones(npix)
    if pixel.size:
        seg_end = np.ones(pixel.size, dtype=bool)
        seg_end[:-1] = pixel[1:] != pixel[:-1]
        T_final[pixel[seg_end]] = frag_T[seg_end] * (1.0 - alpha[seg_end])

    w = alpha * frag_T
    img = np.empty((npix, 3))
    for ch in range(3):
        img[:, ch] = np.bincount(pixel, weights=w * color[frag_splat, ch], minlength=npix)
    img += T_final[:, None] * bg[None, :]

    cache = RenderCache(
        fingerprint=model.fingerprint(), n_splats=len(model), width=Wd, height=Ht,
        background=bg, cam_center=cam_center, W=Wm, intr=intr,
        vis=vis, t_cam=t_cam, J=J, R=R, scales=scales, cov3=cov3, T=T, conic=conic,
        opac=opac, dirs=dirs, dist=dist, basis=basis, color=color, color_mask=color_mask,
        q_raw=model.rotations[vis], sh_vis=model.sh[vis, : sh_count(deg)], sh_degree=deg,
        frag_splat=frag_splat, frag_pixel=pixel, frag_dx=dx, frag_dy=dy, frag_alpha=alpha,
        frag_clamped=clamped, frag_T=frag_T, T_final=T_final,
    )
    return Image(img.reshape(Ht, Wd, 3)), cache


def _quat_backward(q_raw: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """Chain dL/dR through R(q / |q|) back to the raw quaternion."""
    norm = np.linalg.norm(q_raw, axis=1, keepdims=True)
    q = q_raw / norm
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = dR
    gw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    gx = 2 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1] - w * g[:, 1, 2]
              + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2])
    gy = 2 * (-2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0] + z * g[:, 1, 2]
              - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2])
    gz = 2 * (-2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0] - 2 * z * g[:, 1, 1]
              + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    gq = np.stack([gw, gx, gy, gz], axis=1)
    return (gq - q * np.sum(q * gq, axis=1, keepdims=True)) / norm


def backward_params(cache: RenderCache, grad_image, model: GaussianModel | None = None) -> SplatGrads:
    """Gradients of ``sum(grad_image * rendered)`` w.r.t. every splat parameter.

    Pass ``model`` to have the cache checked against it; a mismatch raises
    StaleCacheError.
    """
    if model is not None and (len(model) != cache.n_splats or model.fingerprint() != cache.fingerprint):
        raise StaleCacheError("model changed since forward_render")
    G = np.asarray(grad_image, dtype=np.float64).reshape(-1, 3)
    if G.shape[0] != cache.width * cache.height:
        raise ValueError("grad_image size does not match the render")
    n = cache.n_splats
    nv = cache.vis.size
    deg = cache.sh_degree
    K = sh_count(deg)
    out = SplatGrads(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4)), np.zeros(n),
                     np.zeros((n, K, 3)), np.zeros((n, 2)))
    if nv == 0 or cache.frag_pixel.size == 0:
        return out

    s = cache.frag_splat
    pix = cache.frag_pixel
    alpha = cache.frag_alpha
    Tk = cache.frag_T
    Gp = G[pix]
    col = cache.color[s]
    w = alpha * Tk

    # dL/dcolor per splat
    dcolor = np.stack([np.bincount(s, weights=w * Gp[:, ch], minlength=nv) for ch in range(3)], axis=1)

    # dL/dalpha: T_k (G.c_k) - (G.S_k) / (1 - alpha_k), S_k the light behind k
    gc = np.einsum("fc,fc->f", Gp, col)
    contrib = gc * w
    cs = np.cumsum(contrib)
    seg_start = _segment_starts(pix)
    seg_id = np.cumsum(seg_start) - 1
    seg_first = np.flatnonzero(seg_start)
    seg_last = np.append(seg_first[1:] - 1, pix.size - 1)
    seg_total = cs[seg_last] - (cs[seg_first] - contrib[seg_first])
    incl = cs - (cs[seg_first] - contrib[seg_first])[seg_id]
    upix = pix[seg_first]
    g_bg = G[upix] @ cache.background * cache.T_final[upix]
    behind = seg_total[seg_id] - incl + g_bg[seg_id]
    dalpha = Tk * gc - behind / (1.0 - alpha)
    dalpha[cache.frag_clamped] = 0.0

    # alpha = opacity * exp(power)
    dpower = dalpha * alpha
    dx, dy = cache.frag_dx, cache.frag_dy
    cA, cB, cC = cache.conic[s, 0], cache.conic[s, 1], cache.conic[s, 2]

    def acc(v):
        return np.bincount(s, weights=v, minlength=nv)

    dopac = acc(dalpha * alpha / cache.opac[s])
    dA = acc(-0.5 * dpower * dx * dx)
    dB = acc(-dpower * dx * dy)
    dC = acc(-0.5 * dpower * dy * dy)
    dmx = acc(dpower * (cA * dx + cB * dy))
    dmy = acc(dpower * (cC * dy + cB * dx))

    # conic -> 2D covariance
    A, B, C = cache.conic[:, 0], cache.conic[:, 1], cache.conic[:, 2]
    Q = np.stack([np.stack([A, B], 1), np.stack([B, C], 1)], 1)
    GQ = np.stack([np.stack([dA, 0.5 * dB], 1), np.stack([0.5 * dB, dC], 1)], 1)
    Gcov2 = -Q @ GQ @ Q

    # 2D covariance -> 3D covariance and projection matrix T = J W
    T = cache.T
    Gcov3 = np.swapaxes(T, 1, 2) @ Gcov2 @ T
    dT = 2.0 * Gcov2 @ T @ cache.cov3
    dJ = dT @ cache.W.T

    # 3D covariance -> scale and rotation (Sigma = M M^T, M = R S)
    M = cache.R * cache.scales[:, None, :]
    dM = 2.0 * Gcov3 @ M
    dscale = np.einsum("nri,nri->ni", dM, cache.R)
    dlog_scale = dscale * cache.scales
    dR = dM * cache.scales[:, None, :]
    drot = _quat_backward(cache.q_raw, dR)

    # camera-space mean: from the 2D mean and from J
    intr = cache.intr
    tx, ty, tz = cache.t_cam[:, 0], cache.t_cam[:, 1], cache.t_cam[:, 2]
    iz = 1.0 / tz
    iz2 = iz * iz
    iz3 = iz2 * iz
    dm2 = np.stack([dmx, dmy], axis=1)
    dt = np.einsum("nij,ni->nj", cache.J, dm2)
    dt[:, 0] += dJ[:, 0, 2] * (-intr.fx * iz2)
    dt[:, 1] += dJ[:, 0, 2] * (-intr.skew * iz2) + dJ[:, 1, 2] * (-intr.fy * iz2)
    dt[:, 2] += (dJ[:, 0, 0] * (-intr.fx * iz2) + dJ[:, 0, 1] * (-intr.skew * iz2)
                 + dJ[:, 0, 2] * 2 * (intr.fx * tx + intr.skew * ty) * iz3
                 + dJ[:, 1, 1] * (-intr.fy * iz2) + dJ[:, 1, 2] * 2 * intr.fy * ty * iz3)
    dmean = dt @ cache.W

    # view-dependent color -> SH coefficients and view direction
    dcol = dcolor * cache.color_mask
    dsh = cache.basis[:, :, None] * dcol[:, None, :]
    ddir = np.einsum("nc,nkc,nkd->nd", dcol, cache.sh_vis, sh_basis_grad(cache.dirs, deg))
    d = cache.dirs
    dmean += (ddir - d * np.sum(d * ddir, axis=1, keepdims=True)) / cache.dist[:, None]

    op = cache.opac
    v = cache.vis
    out.means[v] = dmean
    out.log_scales[v] = dlog_scale
    out.rotations[v] = drot
    out.opacity_logits[v] = dopac * op * (1.0 - op)
    out.sh[v] = dsh
    out.means2d[v] = dm2
    return out
