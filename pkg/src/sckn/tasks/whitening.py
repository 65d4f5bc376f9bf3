"""Local centering followed by a convolutional ZCA transform.

Statistics are estimated once on training images and then frozen; applying a
fitted transform never re-estimates anything.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..core_maps import extract_patches
from ..errors import InvalidArgumentError


@dataclass
class LocalWhitening:
    window: int = 5
    patch_size: int = 5
    eps_rel: float = 1e-2
    max_patches: int = 100_000
    seed: int = 0
    filters: np.ndarray | None = None  # (channels, channels * patch_size**2)

    @property
    def fitted(self) -> bool:
        return self.filters is not None

    def center(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=float)
        size = [1] * (images.ndim - 2) + [self.window, self.window]
        return images - ndimage.uniform_filter(images, size=size, mode="reflect")

    def fit(self, images: np.ndarray) -> "LocalWhitening":
        """Estimate the ZCA transform from patches of centered ``(n, c, h, w)`` images."""
        images = np.asarray(images, dtype=float)
        if images.ndim != 4:
            raise InvalidArgumentError("fit expects an (n, channels, height, width) stack")
        rng = np.random.default_rng(self.seed)
        n, c, h, w = images.shape
        per_image = max(1, self.max_patches // n)
        cols = []
        for i in range(n):
            E = extract_patches(self.center(images[i]), self.patch_size)
            pick = rng.choice(h * w, size=min(per_image, h * w), replace=False)
            cols.append(E[:, pick])
        X = np.concatenate(cols, axis=1)
        cov = X @ X.T / X.shape[1]
        lam, V = np.linalg.eigh(cov)
        lam = np.maximum(lam, 0.0)
        eps = self.eps_rel * max(lam.mean(), 1e-12)
        zca = (V / np.sqrt(lam + eps)) @ V.T
        center_idx = np.arange(c) * self.patch_size ** 2 + (self.patch_size ** 2) // 2
        self.filters = zca[center_idx]
        return self

    def apply(self, images: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise InvalidArgumentError("whitening statistics are not fitted")
        images = np.asarray(images, dtype=float)
        h, w = images.shape[-2:]
        E = extract_patches(self.center(images), self.patch_size)
        out = np.einsum("cd,...dk->...ck", self.filters, E)
        return out.reshape(*images.shape[:-2], h, w)


def whiten_local(images: np.ndarray, stats: LocalWhitening) -> np.ndarray:
    return stats.apply(images)
