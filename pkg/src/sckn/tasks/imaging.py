"""Image resampling and color conversion used by the super-resolution pipeline."""

from __future__ import annotations

import functools
import math

import numpy as np
from scipy import ndimage

from ..errors import InvalidArgumentError


def cubic(x, a: float = -0.5):
    """Keys cubic convolution kernel."""
    x = np.abs(np.asarray(x, dtype=float))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x <= 2, far, 0.0))


@functools.lru_cache(maxsize=128)
def resize_matrix(in_len: int, out_len: int, scale: float, antialias: bool = True) -> np.ndarray:
    """``out_len x in_len`` interpolation weights along one axis.

    Pixel centers map as ``u = x/scale + (1 - 1/scale)/2`` (1-based), the
    kernel is widened by ``1/scale`` when shrinking with antialiasing, rows sum
    to one, and out-of-range taps mirror symmetrically.
    """
    if antialias and scale < 1:
        def kernel(x):
            return scale * cubic(scale * x)
        width = 4.0 / scale
    else:
        kernel = cubic
        width = 4.0
    x = np.arange(1, out_len + 1, dtype=float)
    u = x / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - width / 2)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    weights = kernel(u[:, None] - idx)
    weights /= weights.sum(axis=1, keepdims=True)
    mirror = np.concatenate([np.arange(in_len), np.arange(in_len - 1, -1, -1)])
    cols = mirror[np.mod(idx.astype(int) - 1, 2 * in_len)]
    mat = np.zeros((out_len, in_len))
    np.add.at(mat, (np.repeat(np.arange(out_len), taps), cols.ravel()), weights.ravel())
    return mat


def bicubic_resize(image: np.ndarray, scale: float, antialias: bool = True) -> np.ndarray:
    """Resize the two leading axes of ``image`` by ``scale`` (output size
    ``ceil(scale * n)``); trailing axes (color channels) are carried along."""
    if not scale > 0:
        raise InvalidArgumentError(f"scale must be positive, got {scale}")
    img = np.asarray(image, dtype=float)
    h, w = img.shape[:2]
    oh, ow = math.ceil(scale * h - 1e-9), math.ceil(scale * w - 1e-9)
    rh = resize_matrix(h, oh, float(scale), antialias)
    rw = resize_matrix(w, ow, float(scale), antialias)
    out = np.tensordot(rh, img, axes=(1, 0))
    out = np.moveaxis(np.tensordot(rw, out, axes=(1, 1)), 0, 1)
    return out


def modcrop(image: np.ndarray, scale: int) -> np.ndarray:
    h, w = image.shape[:2]
    return image[: h - h % scale, : w - w % scale]


def box_mean(image: np.ndarray, size: int = 5) -> np.ndarray:
    """Local mean over a ``size x size`` window (symmetric boundary)."""
    return ndimage.uniform_filter(np.asarray(image, dtype=float), size=size, mode="reflect")


_YCBCR = np.array([
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
]) / 255.0
_YCBCR_OFFSET = np.array([16.0, 128.0, 128.0])


def rgb_to_ycbcr(image: np.ndarray) -> np.ndarray:
    """BT.601 studio-swing conversion for RGB in [0, 255] along the last axis."""
    img = np.asarray(image, dtype=float)
    if img.shape[-1] != 3:
        raise InvalidArgumentError(f"expected 3 color channels on the last axis, got shape {img.shape}")
    return img @ _YCBCR.T + _YCBCR_OFFSET


def ycbcr_to_rgb(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    if img.shape[-1] != 3:
        raise InvalidArgumentError(f"expected 3 color channels on the last axis, got shape {img.shape}")
    return (img - _YCBCR_OFFSET) @ np.linalg.inv(_YCBCR).T


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(image), 0, 255).astype(np.uint8)
