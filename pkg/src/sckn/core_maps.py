"""Feature-map storage conventions and the linear operators acting on maps.

A spatial map is a plain ``ndarray`` of shape ``(channels, height, width)``;
every function here also accepts a leading batch axis ``(n, channels,
height, width)``.  Patch matrices have shape ``(..., patch_dim, height*width)``
with one column per source pixel in row-major order, and patch entries ordered
channel-major, then row-major inside the window.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError

NORM_OFFSET = 1e-5


def _check_map(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim < 3:
        raise InvalidArgumentError(f"expected a (channels, height, width) map, got shape {x.shape}")
    return x


def extract_patches(x: np.ndarray, patch_size: int) -> np.ndarray:
    """All overlapping ``patch_size`` x ``patch_size`` patches, zero-padded.

    Returns an array of shape ``(..., channels * patch_size**2, height * width)``
    whose column ``z`` is the patch centered at pixel ``z``.
    """
    x = _check_map(x)
    c, h, w = x.shape[-3:]
    if patch_size < 1 or patch_size % 2 == 0:
        raise InvalidArgumentError(f"patch_size must be a positive odd integer, got {patch_size}")
    if patch_size > 2 * min(h, w) + 1:
        raise InvalidArgumentError(f"patch_size {patch_size} too large for a {h}x{w} map")
    lead = x.shape[:-3]
    if patch_size == 1:
        return x.reshape(*lead, c, h * w).copy()
    r = patch_size // 2
    pad = [(0, 0)] * (x.ndim - 2) + [(r, r), (r, r)]
    xp = np.pad(x, pad)
    win = np.lib.stride_tricks.sliding_window_view(xp, (patch_size, patch_size), axis=(-2, -1))
    # (..., c, h, w, e, e) -> (..., c, e, e, h, w)
    nl = len(lead)
    win = np.moveaxis(win, (nl + 3, nl + 4), (nl + 1, nl + 2))
    return win.reshape(*lead, c * patch_size * patch_size, h * w)


def combine_patches(patches: np.ndarray, patch_size: int, out_shape: tuple[int, int]) -> np.ndarray:
    """Adjoint of :func:`extract_patches`.

    Each column is spread back over the window it came from and overlapping
    contributions are summed.
    """
    patches = np.asarray(patches)
    h, w = out_shape
    if patch_size < 1 or patch_size % 2 == 0:
        raise InvalidArgumentError(f"patch_size must be a positive odd integer, got {patch_size}")
    e2 = patch_size * patch_size
    if patches.ndim < 2 or patches.shape[-1] != h * w or patches.shape[-2] % e2:
        raise InvalidArgumentError(
            f"patch matrix of shape {patches.shape} inconsistent with out_shape {out_shape} "
            f"and patch_size {patch_size}"
        )
    lead = patches.shape[:-2]
    c = patches.shape[-2] // e2
    if patch_size == 1:
        return patches.reshape(*lead, c, h, w).copy()
    r = patch_size // 2
    cols = patches.reshape(*lead, c, patch_size, patch_size, h, w)
    out = np.zeros((*lead, c, h + 2 * r, w + 2 * r), dtype=patches.dtype)
    for di in range(patch_size):
        for dj in range(patch_size):
            out[..., di:di + h, dj:dj + w] += cols[..., di, dj, :, :]
    return out[..., r:r + h, r:r + w]


def column_norms(patches: np.ndarray) -> np.ndarray:
    """Euclidean norm of every column plus the fixed ``1e-5`` offset."""
    return np.linalg.norm(patches, axis=-2) + NORM_OFFSET


def pooled_size(n: int, subsampling: float) -> int:
    # tolerance keeps exact ratios such as 9/3 from rounding up
    return max(1, math.ceil(n / subsampling - 1e-9))


@dataclass(frozen=True)
class PoolSpec:
    """Gaussian pooling parameters, independent of the map size.

    ``beta`` and ``radius`` default to ``1/(2 s^2)`` and ``2 s`` (Gaussian of
    standard deviation ``s`` input pixels, truncated at two deviations).
    """

    subsampling: float
    beta: float | None = None
    radius: float | None = None
    normalize: bool = False

    def __post_init__(self):
        if not self.subsampling > 0:
            raise InvalidArgumentError(f"subsampling must be positive, got {self.subsampling}")
        if self.beta is None:
            object.__setattr__(self, "beta", 1.0 / (2.0 * self.subsampling ** 2))
        if self.radius is None:
            object.__setattr__(self, "radius", 2.0 * self.subsampling)
        if not (self.beta > 0 and self.radius > 0):
            raise InvalidArgumentError("beta and radius must be positive")

    def operator(self, in_height: int, in_width: int) -> "PoolOperator":
        return _pool_operator(self, int(in_height), int(in_width))


@dataclass(frozen=True, eq=False)
class PoolOperator:
    """Truncated Gaussian pooling matrix for one input grid size.

    ``matrix`` has shape ``(in_height*in_width, out_height*out_width)`` so that
    a map ``M`` seen as ``channels x pixels`` pools as ``M @ matrix``.
    """

    spec: PoolSpec
    in_height: int
    in_width: int
    out_height: int
    out_width: int
    matrix: sp.csr_matrix
    matrix_t: sp.csr_matrix

    @property
    def beta(self) -> float:
        return self.spec.beta

    @property
    def subsampling(self) -> float:
        return self.spec.subsampling

    @property
    def truncation_radius(self) -> float:
        return self.spec.radius

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _axis_pairs(n_in: int, n_out: int, s: float, radius: float):
    """Input/output index pairs along one axis within ``radius`` and their offsets."""
    centers = np.arange(n_out) * s
    pos = np.arange(n_in, dtype=float)
    diff = pos[:, None] - centers[None, :]
    a, i = np.nonzero(np.abs(diff) <= radius + 1e-12)
    return a, i, diff[a, i]


@functools.lru_cache(maxsize=64)
def _pool_operator(spec: PoolSpec, in_h: int, in_w: int) -> PoolOperator:
    s = float(spec.subsampling)
    out_h, out_w = pooled_size(in_h, s), pooled_size(in_w, s)
    ra, ri, rd = _axis_pairs(in_h, out_h, s, spec.radius)
    ca, ck, cd = _axis_pairs(in_w, out_w, s, spec.radius)
    d2 = rd[:, None] ** 2 + cd[None, :] ** 2
    keep = d2 <= spec.radius ** 2 + 1e-12
    rows = (ra[:, None] * in_w + ca[None, :])[keep]
    cols = (ri[:, None] * out_w + ck[None, :])[keep]
    vals = np.exp(-spec.beta * d2[keep])
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(in_h * in_w, out_h * out_w))
    if spec.normalize:
        colsum = np.asarray(mat.sum(axis=0)).ravel()
        mat = (mat @ sp.diags(1.0 / np.where(colsum > 0, colsum, 1.0))).tocsr()
    return PoolOperator(spec, in_h, in_w, out_h, out_w, mat, mat.T.tocsr())


def _apply(x: np.ndarray, mat: sp.csr_matrix, out_hw: tuple[int, int]) -> np.ndarray:
    lead = x.shape[:-2]
    flat = x.reshape(-1, x.shape[-2] * x.shape[-1])
    out = np.asarray((mat.T @ flat.T).T)
    return out.reshape(*lead, *out_hw)


def pool_forward(x: np.ndarray, op: PoolOperator) -> np.ndarray:
    x = _check_map(x)
    if x.shape[-2:] != (op.in_height, op.in_width):
        raise InvalidArgumentError(
            f"map grid {x.shape[-2:]} does not match pooling input {(op.in_height, op.in_width)}"
        )
    return _apply(x, op.matrix, (op.out_height, op.out_width))


def pool_adjoint(x: np.ndarray, op: PoolOperator) -> np.ndarray:
    x = _check_map(x)
    if x.shape[-2:] != (op.out_height, op.out_width):
        raise InvalidArgumentError(
            f"map grid {x.shape[-2:]} does not match pooling output {(op.out_height, op.out_width)}"
        )
    return _apply(x, op.matrix_t, (op.in_height, op.in_width))
