"""PSNR and SSIM for images with peak value 1.

LPIPS is not provided: it needs a pretrained network.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.ndimage import correlate1d

PEAK = 1.0


class MetricReport(NamedTuple):
    psnr: float
    ssim: float
    mse: float


def _pair(x, ref):
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    return x, ref


def mse(x, ref) -> float:
    x, ref = _pair(x, ref)
    return float(np.mean((x - ref) ** 2))


def psnr(x, ref) -> float:
    """``10 log10(1 / mse)``; identical images give ``inf``."""
    err = mse(x, ref)
    if err == 0:
        return float("inf")
    return float(10.0 * np.log10(PEAK**2 / err))


def _gaussian_window(size, sigma=1.5):
    r = np.arange(size) - size // 2
    w = np.exp(-(r**2) / (2 * sigma**2))
    return w / w.sum()


def _filter_valid(img, w):
    # separable filtering, keep only windows fully inside the image
    half = len(w) // 2
    out = correlate1d(correlate1d(img, w, axis=-1, mode="constant"), w, axis=-2, mode="constant")
    return out[..., half : img.shape[-2] - half, half : img.shape[-1] - half]


def ssim(x, ref, window: int = 11, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM with a Gaussian window (sigma 1.5), averaged over channels."""
    x, ref = _pair(x, ref)
    if window not in (7, 11):
        raise ValueError("window must be 7 or 11")
    if x.ndim == 2:
        x, ref = x[None], ref[None]
    if window > min(x.shape[-2:]):
        raise ValueError(f"window {window} larger than image {x.shape[-2:]}")
    w = _gaussian_window(window)
    c1 = (k1 * PEAK) ** 2
    c2 = (k2 * PEAK) ** 2
    mu_x = _filter_valid(x, w)
    mu_r = _filter_valid(ref, w)
    var_x = _filter_valid(x * x, w) - mu_x**2
    var_r = _filter_valid(ref * ref, w) - mu_r**2
    cov = _filter_valid(x * ref, w) - mu_x * mu_r
    num = (2 * mu_x * mu_r + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_r**2 + c1) * (var_x + var_r + c2)
    per_channel = (num / den).reshape(x.shape[0], -1).mean(axis=1)
    return float(per_channel.mean())


def report(x, ref, window: int = 11) -> MetricReport:
    return MetricReport(psnr(x, ref), ssim(x, ref, window), mse(x, ref))
