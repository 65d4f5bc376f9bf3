"""Single-image super-resolution on the luminance channel.

The network sees a bicubic upscale with its local 5x5 mean removed and a
per-pixel linear head predicts the residual to the high-resolution image, so a
zero head reproduces plain bicubic interpolation.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError, SingularMatrixError
from ..layer import LayerConfig, NetworkParams, network_forward, unsupervised_init
from ..optim import FitSchedule, fit
from .imaging import bicubic_resize, box_mean, modcrop, rgb_to_ycbcr, to_uint8, ycbcr_to_rgb
from .metrics import psnr

log = logging.getLogger(__name__)


class PixelRegressor:
    """Ridge regression ``r(u) ~ <w, I(u)>`` shared across pixels.

    The objective is the squared error averaged over all samples and pixels
    plus ``lam/2 ||w||^2``. It is solved in closed form from streamed
    second-moment statistics.
    """

    deactivates = False

    def __init__(self, w=None, lam: float = 1e-6):
        self.w = None if w is None else np.asarray(w, dtype=float).ravel()
        self.lam = float(lam)

    def copy(self):
        return copy.deepcopy(self)

    def predict(self, features):
        return np.einsum("p,...phw->...hw", self.w, features)

    def cotangent(self, features, targets):
        r = np.asarray(targets, dtype=float).reshape(len(features), *features.shape[-2:])
        err = self.predict(features) - r
        pixels = err.shape[-1] * err.shape[-2]
        vals = np.mean(err ** 2, axis=(-2, -1))
        U = (2.0 / pixels) * err[:, None] * self.w[None, :, None, None]
        return vals, U, np.zeros(len(features), dtype=bool)

    def solve(self, net, data, targets, batch_size=64) -> float:
        p = net.output_channels
        C = np.zeros((p, p))
        b = np.zeros(p)
        rr = 0.0
        count = 0
        targets = np.asarray(targets, dtype=float)
        for start in range(0, len(data), batch_size):
            feats, _ = network_forward(net, data[start:start + batch_size])
            F = np.moveaxis(feats, 1, -1).reshape(-1, p)
            r = targets[start:start + batch_size].reshape(-1)
            C += F.T @ F
            b += F.T @ r
            rr += float(r @ r)
            count += len(r)
        C /= count
        b /= count
        rr /= count
        # stationarity of the objective: (2C + lam I) w = 2b
        try:
            self.w = np.linalg.solve(2 * C + self.lam * np.eye(p), 2 * b)
        except np.linalg.LinAlgError as err:
            raise SingularMatrixError("pixel regression system is singular; increase lam") from err
        w = self.w
        return float(rr - 2 * w @ b + w @ C @ w + 0.5 * self.lam * w @ w)


@dataclass
class SrModel:
    net: NetworkParams
    head: PixelRegressor
    scale: int = 2
    mean_size: int = 5

    def __post_init__(self):
        if any(layer.pool is not None for layer in self.net.layers):
            raise InvalidArgumentError("super-resolution layers must not pool")
        if self.net.input_channels != 1:
            raise InvalidArgumentError("super-resolution networks take one luminance channel")

    @property
    def margin(self) -> int:
        return sum(layer.patch_size // 2 for layer in self.net.layers)


def degrade(hr, scale: int):
    """Bicubic downscale by ``1/scale`` followed by bicubic upscale back."""
    hr = np.asarray(hr, dtype=float)
    low = bicubic_resize(hr, 1.0 / scale)
    return bicubic_resize(low, scale)[: hr.shape[0], : hr.shape[1]]


def build_sr_patchset(images, n: int = 200_000, size: int = 32, scale: int = 2, seed=0,
                      mean_size: int = 5):
    """Random ``size x size`` training pairs from luminance images in [0, 1].

    Returns ``(inputs, targets)`` with shape ``(n, 1, size, size)``: the
    degraded patch and the original patch, both minus the local mean of the
    degraded patch.
    """
    if size % scale:
        raise InvalidArgumentError(f"patch size {size} is not a multiple of the scale {scale}")
    images = [np.asarray(im, dtype=float) for im in images]
    for k, im in enumerate(images):
        if im.ndim != 2:
            raise InvalidArgumentError(f"image {k} is not a single-channel 2-D array")
        if im.shape[0] < size or im.shape[1] < size:
            raise InvalidArgumentError(f"image {k} of shape {im.shape} is smaller than the patch size {size}")
    rng = np.random.default_rng(seed)
    # sample images proportionally to their number of patch positions
    counts = np.array([(im.shape[0] - size + 1) * (im.shape[1] - size + 1) for im in images], dtype=float)
    which = rng.choice(len(images), size=n, p=counts / counts.sum())
    crops = np.empty((size, size, n))
    for i, k in enumerate(which):
        im = images[k]
        r = rng.integers(0, im.shape[0] - size + 1)
        c = rng.integers(0, im.shape[1] - size + 1)
        crops[:, :, i] = im[r:r + size, c:c + size]
    blurry = degrade(crops, scale)
    mean = box_mean(blurry, size=(mean_size, mean_size, 1))
    inputs = np.moveaxis(blurry - mean, -1, 0)[:, None]
    targets = np.moveaxis(crops - mean, -1, 0)[:, None]
    return inputs, targets


def _forward_tiled(model: SrModel, x, tile: int = 96):
    """Head output over a whole image, computed on overlapping tiles.

    Tiles overlap by the receptive-field margin, so the result equals a
    single full-image forward pass.
    """
    h, w = x.shape
    m = model.margin
    out = np.empty((h, w))
    for r0 in range(0, h, tile):
        for c0 in range(0, w, tile):
            r1, c1 = min(r0 + tile, h), min(c0 + tile, w)
            ra, ca = max(r0 - m, 0), max(c0 - m, 0)
            rb, cb = min(r1 + m, h), min(c1 + m, w)
            feats, _ = network_forward(model.net, x[None, ra:rb, ca:cb])
            pred = model.head.predict(feats)
            out[r0:r1, c0:c1] = pred[r0 - ra:r1 - ra, c0 - ca:c1 - ca]
    return out


def sr_luminance(model: SrModel, y_low, factor: int = 2, tile: int = 96):
    """Upscale a luminance image in [0, 1] by 2 or 3."""
    if factor not in (2, 3):
        raise InvalidArgumentError(f"unsupported upscaling factor {factor}")
    if model.scale != 2:
        raise InvalidArgumentError("only models trained for x2 are supported")
    if factor == 3:
        y4 = sr_luminance(model, sr_luminance(model, y_low, 2, tile), 2, tile)
        return bicubic_resize(y4, 0.75)
    up = bicubic_resize(y_low, 2)
    mean = box_mean(up, model.mean_size)
    x = up - mean
    return x + _forward_tiled(model, x, tile) + mean


def sr_upscale(model: SrModel, image_rgb, factor: int = 2, tile: int = 96):
    """Upscale an RGB image in [0, 255]; chroma is interpolated bicubically."""
    img = np.asarray(image_rgb, dtype=float)
    if factor not in (2, 3):
        raise InvalidArgumentError(f"unsupported upscaling factor {factor}")
    if img.ndim == 2:
        return 255.0 * sr_luminance(model, img / 255.0, factor, tile)
    ycc = rgb_to_ycbcr(img)
    y = 255.0 * sr_luminance(model, ycc[..., 0] / 255.0, factor, tile)
    chroma = bicubic_resize(ycc[..., 1:], factor)
    return ycbcr_to_rgb(np.concatenate([y[..., None], chroma], axis=-1))


def luminance(image_rgb):
    img = np.asarray(image_rgb, dtype=float)
    return img if img.ndim == 2 else rgb_to_ycbcr(img)[..., 0]


def bicubic_baseline_psnr(image_rgb, scale: int = 2) -> float:
    """Bicubic PSNR with 8-bit quantization between stages and a ``scale``-pixel shave."""
    y = to_uint8(luminance(modcrop(np.asarray(image_rgb, dtype=float), scale))).astype(float)
    low = to_uint8(bicubic_resize(y, 1.0 / scale)).astype(float)
    up = to_uint8(bicubic_resize(low, scale)).astype(float)
    return psnr(y, up, border=scale)


def evaluate_sr(model: SrModel | None, image_rgb, scale: int = 2) -> dict:
    """PSNR of bicubic and of the model on one image, same protocol for both.

    The reference luminance is modcropped; the low-resolution input is its
    bicubic downscale. ``model=None`` evaluates bicubic only.
    """
    y = luminance(modcrop(np.asarray(image_rgb, dtype=float), scale)) / 255.0
    low = bicubic_resize(y, 1.0 / scale)
    ref = 255.0 * y
    out = dict(bicubic=psnr(ref, 255.0 * bicubic_resize(low, scale), border=scale))
    if model is not None:
        out["model"] = psnr(ref, 255.0 * sr_luminance(model, low, scale), border=scale)
    return out


@dataclass
class SrConfig:
    layers: list[LayerConfig] = field(default_factory=lambda: [LayerConfig(32, 3) for _ in range(3)])
    patches: int = 20_000
    patch_size: int = 32
    scale: int = 2
    mean_size: int = 5
    patches_per_layer: int = 100_000
    kmeans_iters: int = 30
    lam: float = 1e-6
    schedule: FitSchedule = field(default_factory=lambda: FitSchedule(epochs=10, eta=0.25, batch_size=64,
                                                                      forward_batch=64))
    seed: int = 0


def train_sr(config: SrConfig, images):
    """Train an SrModel from luminance images in [0, 1].

    Returns ``(model, history)``.
    """
    if any(cfg.subsampling is not None for cfg in config.layers):
        raise InvalidArgumentError("super-resolution layers must not pool")
    inputs, targets = build_sr_patchset(images, config.patches, config.patch_size, config.scale,
                                        config.seed, config.mean_size)
    residual = targets - inputs
    net = unsupervised_init(config.layers, inputs, config.patches_per_layer, seed=config.seed,
                            kmeans_iters=config.kmeans_iters)
    res = fit(net, inputs, residual, PixelRegressor(lam=config.lam), config.schedule)
    return SrModel(res.net, res.head, config.scale, config.mean_size), res.history


def zero_head_model(net: NetworkParams, scale: int = 2, mean_size: int = 5) -> SrModel:
    return SrModel(net, PixelRegressor(np.zeros(net.output_channels)), scale, mean_size)


def mean_gain(model: SrModel, images_rgb, scale: int = 2) -> float:
    """Mean PSNR gain of the model over bicubic, in dB."""
    gains = []
    for im in images_rgb:
        r = evaluate_sr(model, im, scale)
        gains.append(r["model"] - r["bicubic"])
    return float(np.mean(gains)) if gains else math.nan


__all__ = [
    "PixelRegressor", "SrModel", "SrConfig", "build_sr_patchset", "degrade", "sr_luminance",
    "sr_upscale", "bicubic_baseline_psnr", "evaluate_sr", "train_sr", "zero_head_model", "mean_gain",
    "luminance",
]
