"""Photometric loss: (1 - lambda) * L1 + lambda * (1 - SSIM), with its pixel gradient."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def gaussian_taps(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - size // 2
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


_TAPS = gaussian_taps()


def _blur(img: np.ndarray) -> np.ndarray:
    # zero-padded "same" filtering; the kernel is symmetric so this is self-adjoint
    out = correlate1d(img, _TAPS, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, _TAPS, axis=1, mode="constant", cval=0.0)


def _as_array(img) -> np.ndarray:
    return np.asarray(getattr(img, "pixels", img), dtype=np.float64)


def ssim_and_grad(x, y, need_grad: bool = True):
    """Mean SSIM over all pixels and channels, and d SSIM / d x.

    11x11 Gaussian window (sigma 1.5) with zero padding at the borders.
    """
    x = _as_array(x)
    y = _as_array(y)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    mu_x, mu_y = _blur(x), _blur(y)
    sxx = _blur(x * x) - mu_x * mu_x
    syy = _blur(y * y) - mu_y * mu_y
    sxy = _blur(x * y) - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + SSIM_C1
    a2 = 2.0 * sxy + SSIM_C2
    b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    b2 = sxx + syy + SSIM_C2
    smap = (a1 * a2) / (b1 * b2)
    value = float(smap.mean())
    if not need_grad:
        return value, None
    n = smap.size
    d_mu = (2.0 * mu_y * a2 / (b1 * b2) - smap * 2.0 * mu_x / b1)
    d_sxx = -smap / b2
    d_sxy = 2.0 * a1 / (b1 * b2)
    d_mu_total = d_mu - 2.0 * mu_x * d_sxx - mu_y * d_sxy
    grad = (_blur(d_mu_total) + 2.0 * x * _blur(d_sxx) + y * _blur(d_sxy)) / n
    return value, grad


def compute_loss(rendered, target, loss_lambda: float = 0.2) -> tuple[float, np.ndarray]:
    """Return (loss, dloss/drendered) for two equally sized images."""
    r = _as_array(rendered)
    t = _as_array(target)
    if r.shape != t.shape:
        raise ValueError(f"image shapes differ: {r.shape} vs {t.shape}")
    if not 0.0 <= loss_lambda <= 1.0:
        raise ValueError("loss_lambda must be in [0, 1]")
    diff = r - t
    l1 = float(np.abs(diff).mean())
    grad = (1.0 - loss_lambda) * np.sign(diff) / diff.size
    loss = (1.0 - loss_lambda) * l1
    if loss_lambda > 0.0:
        ssim, dssim = ssim_and_grad(r, t)
        loss += loss_lambda * (1.0 - ssim)
        grad = grad - loss_lambda * dssim
    return loss, grad
