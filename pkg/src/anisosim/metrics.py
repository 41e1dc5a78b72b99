"""PSNR and volumetric SSIM between volumes on the same grid."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import Volume3

__all__ = ["SsimParams", "gaussian_window", "mse", "psnr", "ssim", "ssim_map"]


@dataclass(frozen=True)
class SsimParams:
    """SSIM constants; ``dynamic_range=None`` means max - min of the reference."""

    k1: float = 0.01
    k2: float = 0.03
    window: int = 11
    sigma: float = 1.5
    dynamic_range: float | None = None

    def __post_init__(self):
        if not (self.k1 > 0 and self.k2 > 0):
            raise ValueError("k1 and k2 must be positive")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window size must be a positive odd integer")


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized 1D Gaussian taps; the 3D window is their outer product."""
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _arrays(ref, test):
    a = np.asarray(ref.data if isinstance(ref, Volume3) else ref, dtype=np.float64)
    b = np.asarray(test.data if isinstance(test, Volume3) else test, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if isinstance(ref, Volume3) and isinstance(test, Volume3):
        if not np.allclose(ref.spacing, test.spacing, atol=1e-6):
            raise ValueError("spacing mismatch")
    return a, b


def _mask(mask, shape):
    if mask is None:
        return None
    m = np.asarray(mask.data if isinstance(mask, Volume3) else mask).astype(bool)
    if m.shape != shape:
        raise ValueError("mask shape mismatch")
    if not m.any():
        raise ValueError("mask is empty")
    return m


def mse(ref, test, mask=None) -> float:
    a, b = _arrays(ref, test)
    diff2 = (a - b) ** 2
    m = _mask(mask, a.shape)
    return float(diff2[m].mean() if m is not None else diff2.mean())


def _auto_range(a):
    rng = float(a.max() - a.min())
    if rng <= 0:
        raise ValueError("reference has zero dynamic range")
    return rng


def psnr(ref, test, data_range: float | None = None, mask=None) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the volumes are numerically identical."""
    a, _ = _arrays(ref, test)
    if data_range is None:
        data_range = _auto_range(a)
    elif not data_range > 0:
        raise ValueError("data range must be positive")
    err = mse(ref, test, mask)
    if err < 1e-12 * data_range**2:
        return math.inf
    return 10.0 * math.log10(data_range**2 / err)


def ssim_map(ref, test, params: SsimParams = SsimParams()) -> np.ndarray:
    """Local SSIM from Gaussian-weighted moments, mirror boundary."""
    a, b = _arrays(ref, test)
    if min(a.shape) < params.window:
        raise ValueError(f"volume {a.shape} is smaller than the {params.window}^3 window")
    L = params.dynamic_range if params.dynamic_range is not None else _auto_range(a)
    c1 = (params.k1 * L) ** 2
    c2 = (params.k2 * L) ** 2
    w = gaussian_window(params.window, params.sigma)

    def smooth(x):
        for axis in range(x.ndim):
            x = ndimage.correlate1d(x, w, axis=axis, mode="mirror")
        return x

    mu_a, mu_b = smooth(a), smooth(b)
    var_a = smooth(a * a) - mu_a**2
    var_b = smooth(b * b) - mu_b**2
    cov = smooth(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(ref, test, params: SsimParams = SsimParams(), mask=None) -> float:
    smap = ssim_map(ref, test, params)
    m = _mask(mask, smap.shape)
    return float(smap[m].mean() if m is not None else smap.mean())
