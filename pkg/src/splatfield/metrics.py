"""Image quality metrics: PSNR and SSIM (with an exact SSIM gradient).

SSIM uses the standard 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
K2 = 0.03, dynamic range 1, evaluated at valid window positions only.
Color images are converted to grayscale by channel mean first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .errors import DimensionError

PSNR_CAP = 99.0
WINDOW = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03
C1 = (K1 * 1.0) ** 2
C2 = (K2 * 1.0) ** 2


def _gaussian_window() -> np.ndarray:
    r = np.arange(WINDOW) - (WINDOW - 1) / 2.0
    g = np.exp(-0.5 * (r / SIGMA) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


_W = _gaussian_window()


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10·log10(1/MSE) for [0,1] images, capped at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def _to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img.mean(axis=2)
    if img.ndim == 2:
        return img
    raise DimensionError("images must be HxW or HxWxC")


def _moments(x: np.ndarray, y: np.ndarray):
    mu_x = convolve2d(x, _W, mode="valid")
    mu_y = convolve2d(y, _W, mode="valid")
    s_xx = convolve2d(x * x, _W, mode="valid")
    s_yy = convolve2d(y * y, _W, mode="valid")
    s_xy = convolve2d(x * y, _W, mode="valid")
    return mu_x, mu_y, s_xx, s_yy, s_xy


def _ssim_map(mu_x, mu_y, s_xx, s_yy, s_xy):
    var_x = s_xx - mu_x * mu_x
    var_y = s_yy - mu_y * mu_y
    cov = s_xy - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + C1
    a2 = 2.0 * cov + C2
    b1 = mu_x * mu_x + mu_y * mu_y + C1
    b2 = var_x + var_y + C2
    return (a1 * a2) / (b1 * b2), (a1, a2, b1, b2)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over valid window positions."""
    x, y = _to_gray(a), _to_gray(b)
    if x.shape != y.shape:
        raise DimensionError(f"ssim shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < WINDOW:
        raise DimensionError(f"ssim needs at least {WINDOW}x{WINDOW} images")
    smap, _ = _ssim_map(*_moments(x, y))
    return float(smap.mean())


def ssim_with_grad(a: np.ndarray, b: np.ndarray):
    """SSIM value plus d(ssim)/d(a), shaped like ``a``."""
    a_arr = np.asarray(a, dtype=np.float64)
    x, y = _to_gray(a_arr), _to_gray(b)
    if x.shape != y.shape:
        raise DimensionError(f"ssim shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < WINDOW:
        raise DimensionError(f"ssim needs at least {WINDOW}x{WINDOW} images")
    mu_x, mu_y, s_xx, s_yy, s_xy = _moments(x, y)
    smap, (a1, a2, b1, b2) = _ssim_map(mu_x, mu_y, s_xx, s_yy, s_xy)
    d_map = np.full(smap.shape, 1.0 / smap.size)

    inv = 1.0 / (b1 * b2)
    d_a1 = d_map * a2 * inv
    d_a2 = d_map * a1 * inv
    d_b1 = -d_map * smap / b1
    d_b2 = -d_map * smap / b2
    # a1 = 2 mu_x mu_y + C1; b1 = mu_x^2 + mu_y^2 + C1
    d_mu_x = 2.0 * mu_y * d_a1 + 2.0 * mu_x * d_b1
    # a2 = 2 (s_xy - mu_x mu_y) + C2; b2 = s_xx + s_yy - mu_x^2 - mu_y^2 + C2
    d_s_xy = 2.0 * d_a2
    d_mu_x += -2.0 * mu_y * d_a2 - 2.0 * mu_x * d_b2
    d_s_xx = d_b2

    def scatter(d):
        return convolve2d(d, _W, mode="full")

    d_x = scatter(d_mu_x) + 2.0 * x * scatter(d_s_xx) + y * scatter(d_s_xy)
    if a_arr.ndim == 3:
        d_a = np.repeat(d_x[:, :, None], a_arr.shape[2], axis=2) / a_arr.shape[2]
    else:
        d_a = d_x
    return float(smap.mean()), d_a


@dataclass
class MetricsReport:
    psnr: float
    ssim: float
    psnr_channels: list
    ssim_channels: list

    def to_dict(self) -> dict:
        return {
            "psnr": self.psnr,
            "ssim": self.ssim,
            "psnr_channels": self.psnr_channels,
            "ssim_channels": self.ssim_channels,
        }


def metrics_report(a: np.ndarray, b: np.ndarray) -> MetricsReport:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"metrics shape mismatch: {a.shape} vs {b.shape}")
    chans_p, chans_s = [], []
    if a.ndim == 3:
        for c in range(a.shape[2]):
            chans_p.append(psnr(a[:, :, c], b[:, :, c]))
            if min(a.shape[:2]) >= WINDOW:
                chans_s.append(ssim(a[:, :, c], b[:, :, c]))
    value_s = ssim(a, b) if min(a.shape[:2]) >= WINDOW else float("nan")
    return MetricsReport(psnr(a, b), value_s, chans_p, chans_s)
