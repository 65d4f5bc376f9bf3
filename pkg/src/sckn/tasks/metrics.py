"""Reconstruction and classification metrics."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from ..errors import InvalidArgumentError


def _pair(ref, est):
    ref = np.asarray(ref, dtype=float)
    est = np.asarray(est, dtype=float)
    if ref.shape != est.shape:
        raise InvalidArgumentError(f"shape mismatch {ref.shape} vs {est.shape}")
    return ref, est


def shave(image: np.ndarray, border: int) -> np.ndarray:
    if border <= 0:
        return image
    return image[border:-border, border:-border]


def psnr(ref, est, peak: float = 255.0, border: int = 0) -> float:
    """Peak signal-to-noise ratio in dB, ignoring ``border`` pixels on each side.

    Returns ``inf`` for identical inputs.
    """
    ref, est = _pair(ref, est)
    ref, est = shave(ref, border), shave(est, border)
    mse = float(np.mean((ref - est) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(ref, est, peak: float = 255.0, size: int = 11, sigma: float = 1.5) -> float:
    """Mean structural similarity over valid windows (2-D grayscale inputs)."""
    ref, est = _pair(ref, est)
    if ref.ndim != 2:
        raise InvalidArgumentError("ssim expects a single-channel 2-D image")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    win = gaussian_window(size, sigma)
    r = size // 2

    def filt(x):
        return ndimage.correlate(x, win, mode="constant")[r:-r or None, r:-r or None]

    mu1, mu2 = filt(ref), filt(est)
    s11 = filt(ref * ref) - mu1 * mu1
    s22 = filt(est * est) - mu2 * mu2
    s12 = filt(ref * est) - mu1 * mu2
    num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


def error_rate(predicted, truth) -> float:
    """Percentage of mismatches."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if truth.size == 0:
        raise InvalidArgumentError("error rate of an empty set is undefined")
    if predicted.shape != truth.shape:
        raise InvalidArgumentError("prediction and label counts differ")
    return 100.0 * float(np.mean(predicted != truth))
