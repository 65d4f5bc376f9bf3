"""Layers of a convolutional kernel network: parametrization, forward pass,
stacking, and unsupervised initialization with spherical K-means."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core_maps import NORM_OFFSET, PoolSpec, extract_patches, pool_forward
from .errors import DataError, InvalidArgumentError
from .kernel_ops import KernelSpec, WhiteningSet, inv_sqrt_psd, kappa

log = logging.getLogger(__name__)

UNIT_TOL = 1e-6
DEGENERATE_NORM = 1e-8


@dataclass
class LayerConfig:
    """Architecture of one layer; ``subsampling=None`` disables pooling."""

    filters: int
    patch_size: int = 3
    subsampling: float | None = None
    alpha: float = 4.0
    epsilon: float = 1e-3
    pool_beta: float | None = None
    pool_radius: float | None = None

    def pool_spec(self) -> PoolSpec | None:
        if self.subsampling is None:
            return None
        return PoolSpec(self.subsampling, beta=self.pool_beta, radius=self.pool_radius)


class LayerParams:
    """Filters ``Z`` (unit columns), kernel, patch size, pooling and the cached
    whitening ``A = (kappa(Z^T Z) + eps I)^{-1/2}``.

    Assigning ``Z`` or ``alpha`` rebuilds the whitening matrices.
    ``require_unit=False`` lifts the unit-norm check so derivatives can be
    probed off the sphere.
    """

    def __init__(self, Z, alpha=4.0, patch_size=3, pool: PoolSpec | None = None, epsilon=1e-3,
                 require_unit: bool = True):
        if patch_size < 1 or patch_size % 2 == 0:
            raise InvalidArgumentError(f"patch_size must be a positive odd integer, got {patch_size}")
        self.patch_size = int(patch_size)
        self.pool = pool
        self.epsilon = float(epsilon)
        self.require_unit = bool(require_unit)
        self._kernel = KernelSpec(float(alpha))
        self._Z = None
        self.Z = Z

    @property
    def Z(self) -> np.ndarray:
        return self._Z

    @Z.setter
    def Z(self, Z):
        Z = np.array(Z, dtype=float)
        if Z.ndim != 2:
            raise InvalidArgumentError("filter matrix must be 2-D (patch_dim x filters)")
        if self.require_unit and np.max(np.abs(np.linalg.norm(Z, axis=0) - 1.0)) > UNIT_TOL:
            raise InvalidArgumentError("filter columns must have unit l2-norm")
        if self._Z is not None and Z.shape != self._Z.shape:
            raise InvalidArgumentError(f"filter shape changed from {self._Z.shape} to {Z.shape}")
        self._Z = Z
        self._rebuild()

    @property
    def kernel(self) -> KernelSpec:
        return self._kernel

    @property
    def alpha(self) -> float:
        return self._kernel.alpha

    @alpha.setter
    def alpha(self, value):
        self._kernel = KernelSpec(float(value))
        self._rebuild()

    def _rebuild(self):
        self.gram = self._Z.T @ self._Z
        self.whitening: WhiteningSet = inv_sqrt_psd(kappa(self._kernel, self.gram), self.epsilon)

    @property
    def patch_dim(self) -> int:
        return self._Z.shape[0]

    @property
    def filters_out(self) -> int:
        return self._Z.shape[1]

    @property
    def in_channels(self) -> int:
        return self.patch_dim // (self.patch_size ** 2)

    def copy(self) -> "LayerParams":
        return LayerParams(self._Z.copy(), self.alpha, self.patch_size, self.pool, self.epsilon,
                           self.require_unit)

    def __repr__(self):
        return (f"LayerParams(in={self.in_channels}, filters={self.filters_out}, "
                f"patch={self.patch_size}, alpha={self.alpha:g}, pool={self.pool})")


@dataclass
class NetworkParams:
    layers: list[LayerParams]
    input_channels: int

    def __post_init__(self):
        channels = self.input_channels
        for j, layer in enumerate(self.layers):
            if layer.patch_dim != channels * layer.patch_size ** 2:
                raise InvalidArgumentError(
                    f"layer {j} expects patch_dim {channels * layer.patch_size ** 2}, "
                    f"filters have {layer.patch_dim} rows"
                )
            channels = layer.filters_out

    @property
    def output_channels(self) -> int:
        return self.layers[-1].filters_out if self.layers else self.input_channels

    def output_shape(self, height: int, width: int) -> tuple[int, int, int]:
        for layer in self.layers:
            if layer.pool is not None:
                op = layer.pool.operator(height, width)
                height, width = op.out_height, op.out_width
        return self.output_channels, height, width

    def copy(self) -> "NetworkParams":
        return NetworkParams([layer.copy() for layer in self.layers], self.input_channels)


@dataclass
class LayerCache:
    """Forward intermediates of one layer for a batch of ``n`` maps.

    patches ``(n, d, P)``: E_j(I_{j-1}); norms ``(n, P)``: S_j with offset;
    raw_norms ``(n, P)``; cosines ``(n, p, P)``: Z^T E S^{-1}; kappa_vals:
    kappa(cosines); pre_pool ``(n, p, P)``: M_j; output ``(n, p, H', W')``: I_j.
    """

    patches: np.ndarray
    norms: np.ndarray
    raw_norms: np.ndarray
    cosines: np.ndarray
    kappa_vals: np.ndarray
    pre_pool: np.ndarray
    output: np.ndarray
    in_shape: tuple[int, int]
    pool_op: object = None
    extra: dict = field(default_factory=dict)


def encode_patch(layer: LayerParams, x: np.ndarray) -> np.ndarray:
    """psi(x) = ||x|| A kappa(Z^T x / ||x||), and 0 for x = 0."""
    x = np.asarray(x, dtype=float)
    if x.shape != (layer.patch_dim,):
        raise InvalidArgumentError(f"expected a vector of length {layer.patch_dim}, got {x.shape}")
    nx = np.linalg.norm(x)
    if nx == 0:
        return np.zeros(layer.filters_out)
    return nx * (layer.whitening.A @ kappa(layer.kernel, layer.Z.T @ (x / nx)))


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise InvalidArgumentError(f"expected a 3-D map or 4-D batch, got shape {x.shape}")


def layer_forward(layer: LayerParams, x: np.ndarray, keep_cache: bool = True):
    """One layer: convolution, contrast normalization, kappa, 1x1 whitening,
    rescaling by the patch norm, then pooling if configured.

    Returns ``(output, cache)``; ``cache`` is ``None`` when ``keep_cache`` is false.
    """
    xb, single = _as_batch(x)
    if xb.shape[1] != layer.in_channels:
        raise InvalidArgumentError(f"layer expects {layer.in_channels} channels, got {xb.shape[1]}")
    n, _, h, w = xb.shape
    E = extract_patches(xb, layer.patch_size)
    raw = np.linalg.norm(E, axis=1)
    S = raw + NORM_OFFSET
    T = (layer.Z.T @ E) / S[:, None, :]
    K = kappa(layer.kernel, T)
    M = layer.whitening.A @ (K * S[:, None, :])
    Mmap = M.reshape(n, layer.filters_out, h, w)
    op = None
    if layer.pool is not None:
        op = layer.pool.operator(h, w)
        out = pool_forward(Mmap, op)
    else:
        out = Mmap
    cache = None
    if keep_cache:
        cache = LayerCache(E, S, raw, T, K, M, out, (h, w), op)
    if single:
        out = out[0]
    return out, cache


def network_forward(net: NetworkParams, image: np.ndarray, keep_cache: bool = False):
    """Fold :func:`layer_forward` over the layers.

    Returns ``(I_k, caches)`` with ``caches`` a list (empty unless ``keep_cache``).
    """
    x = np.asarray(image, dtype=float)
    if x.shape[-3] != net.input_channels:
        raise InvalidArgumentError(f"network expects {net.input_channels} channels, got {x.shape[-3]}")
    caches = []
    for layer in net.layers:
        x, cache = layer_forward(layer, x, keep_cache=keep_cache)
        if keep_cache:
            caches.append(cache)
    return x, caches


def network_forward_batched(net: NetworkParams, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Final maps for a stack of images, computed in chunks to bound memory."""
    images = np.asarray(images, dtype=float)
    outs = [network_forward(net, images[i:i + batch_size])[0] for i in range(0, len(images), batch_size)]
    if not outs:
        return np.zeros((0, *net.output_shape(*images.shape[-2:])))
    return np.concatenate(outs)


def network_kernel(net: NetworkParams, image_a: np.ndarray, image_b: np.ndarray) -> float:
    fa, _ = network_forward(net, image_a)
    fb, _ = network_forward(net, image_b)
    return float(np.sum(fa * fb))


def spherical_kmeans(X: np.ndarray, p: int, iters: int = 50, tol: float = 1e-5, seed=0,
                     history: list | None = None) -> np.ndarray:
    """Spherical K-means on the unit columns of ``X`` (``d x n``).

    Returns ``p`` unit centroids as the columns of a ``d x p`` matrix. The
    objective ``sum_i max_j <x_i, z_j>`` is appended to ``history`` (if given)
    after every assignment step.
    """
    X = np.asarray(X, dtype=float)
    d, n = X.shape
    if p > n:
        raise InvalidArgumentError(f"cannot fit {p} centroids to {n} columns")
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms < DEGENERATE_NORM):
        raise InvalidArgumentError("zero column in K-means input; normalize and filter first")
    rng = np.random.default_rng(seed)
    Z = X[:, rng.choice(n, size=p, replace=False)].copy()
    prev = -np.inf
    for _ in range(iters):
        sims = Z.T @ X
        assign = np.argmax(sims, axis=0)
        obj = float(sims[assign, np.arange(n)].sum())
        if history is not None:
            history.append(obj)
        if np.isfinite(prev) and obj - prev <= tol * abs(prev):
            break
        prev = obj
        onehot = sp.csr_matrix((np.ones(n), (np.arange(n), assign)), shape=(n, p))
        sums = np.asarray((onehot.T @ X.T).T)
        lengths = np.linalg.norm(sums, axis=0)
        empty = lengths < DEGENERATE_NORM
        Z = np.where(empty, Z, sums / np.where(empty, 1.0, lengths))
        if np.any(empty):
            Z[:, empty] = X[:, rng.integers(0, n, size=int(empty.sum()))]
    return Z


def sample_layer_patches(net: NetworkParams, images: np.ndarray, depth: int, n: int,
                         patch_size: int, rng: np.random.Generator, batch_size: int = 128) -> np.ndarray:
    """Draw ``n`` raw patch columns of size ``patch_size`` from the maps obtained
    by running the first ``depth`` layers of ``net``.

    Positions are uniform over (image, pixel) pairs.
    """
    images = np.asarray(images, dtype=float)
    sub = NetworkParams(net.layers[:depth], net.input_channels)
    c, h, w = sub.output_shape(*images.shape[-2:])
    img_idx = rng.integers(0, len(images), size=n)
    pix_idx = rng.integers(0, h * w, size=n)
    out = np.empty((c * patch_size ** 2, n))
    uniq = np.unique(img_idx)
    for start in range(0, len(uniq), batch_size):
        chunk = uniq[start:start + batch_size]
        maps, _ = network_forward(sub, images[chunk])
        E = extract_patches(maps, patch_size)
        sel = np.nonzero(np.isin(img_idx, chunk))[0]
        out[:, sel] = E[np.searchsorted(chunk, img_idx[sel]), :, pix_idx[sel]].T
    return out


def unsupervised_init(configs: list[LayerConfig], images: np.ndarray, patches_per_layer: int = 100_000,
                      seed=0, kmeans_iters: int = 50) -> NetworkParams:
    """Greedy layer-wise initialization: K-means filters on normalized patches
    of the previous layer's output, then the Nyström whitening."""
    images = np.asarray(images, dtype=float)
    if images.ndim != 4 or len(images) == 0:
        raise DataError("unsupervised_init needs a non-empty (n, channels, h, w) image stack")
    rng = np.random.default_rng(seed)
    net = NetworkParams([], images.shape[1])
    for j, cfg in enumerate(configs):
        X = sample_layer_patches(net, images, j, patches_per_layer, cfg.patch_size, rng)
        norms = np.linalg.norm(X, axis=0)
        X = X[:, norms >= DEGENERATE_NORM]
        if X.shape[1] < cfg.filters:
            raise DataError(
                f"layer {j}: only {X.shape[1]} non-degenerate patches for {cfg.filters} filters"
            )
        X /= np.linalg.norm(X, axis=0)
        Z = spherical_kmeans(X, cfg.filters, iters=kmeans_iters, seed=rng.integers(2**32))
        layer = LayerParams(Z, cfg.alpha, cfg.patch_size, cfg.pool_spec(), cfg.epsilon)
        net = NetworkParams(net.layers + [layer], net.input_channels)
        log.info("initialized layer %d: %s from %d patches", j, layer, X.shape[1])
    return net
