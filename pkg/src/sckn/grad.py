"""Closed-form backpropagation through convolutional kernel layers.

Each layer exposes two linear maps of an output cotangent ``U``: ``g(U)``,
the gradient with respect to the filters, and ``h(U)``, the cotangent passed
to the layer input. Chaining them from the top gives the filter gradients of
any smooth loss of the last map.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core_maps import combine_patches, pool_adjoint
from .errors import InvalidArgumentError
from .kernel_ops import kappa, kappa_prime
from .layer import LayerCache, LayerParams, NetworkParams


class Loss(str, enum.Enum):
    SQUARED_HINGE = "squared_hinge"
    SQUARE = "square"
    LOGISTIC = "logistic"


def loss_value_grad(kind, y, yhat):
    """Loss values and derivatives with respect to the prediction, elementwise."""
    kind = Loss(kind)
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if kind is Loss.SQUARED_HINGE:
        slack = np.maximum(0.0, 1.0 - y * yhat)
        return slack ** 2, -2.0 * y * slack
    if kind is Loss.SQUARE:
        r = y - yhat
        return r ** 2, -2.0 * r
    if kind is Loss.LOGISTIC:
        m = y * yhat
        return np.logaddexp(0.0, -m), -y * np.exp(-np.logaddexp(0.0, m))
    raise InvalidArgumentError(f"unknown loss {kind}")


@dataclass
class LayerGrad:
    dZ: np.ndarray
    U_prev: np.ndarray | None
    dalpha: float | None


@dataclass
class GradientSet:
    dZ: list[np.ndarray]
    dalpha: list[float]
    dW: np.ndarray | None = None
    loss: float = 0.0


def layer_backward(layer: LayerParams, cache: LayerCache, U: np.ndarray, *, need_input: bool = True,
                   need_alpha: bool = False, whitening_grad: str = "exact") -> LayerGrad:
    """Apply ``g`` and ``h`` of one layer to the output cotangent ``U``.

    ``U`` has the shape of the cached layer output. ``dZ`` is summed over the
    batch. ``whitening_grad="commuting"`` swaps the exact derivative of
    ``A = (kappa(Z^T Z)+eps I)^{-1/2}`` for the commuting approximation
    ``-1/2 A^{3/2} (.) A^{3/2}``.
    """
    U = np.asarray(U, dtype=float)
    if U.shape[-3:] != cache.output.shape[-3:]:
        raise InvalidArgumentError(f"cotangent shape {U.shape} does not match layer output {cache.output.shape}")
    n = cache.patches.shape[0]
    U = U.reshape(cache.output.shape)
    p = layer.filters_out
    h, w = cache.in_shape
    ws = layer.whitening
    Z = layer.Z

    UP = pool_adjoint(U, cache.pool_op) if cache.pool_op is not None else U
    UP = UP.reshape(n, p, h * w)
    AUP = ws.A @ UP
    B = layer.alpha * cache.kappa_vals * AUP
    SK = cache.kappa_vals * cache.norms[:, None, :]

    # G = sum_n U P^T (kappa(T) S)^T pairs with dA through <dA kappa(T) S P, U>
    G = np.matmul(UP, SK.transpose(0, 2, 1)).sum(axis=0)
    if whitening_grad == "exact":
        H = ws.derivative_adjoint(G)
    elif whitening_grad == "commuting":
        H = ws.derivative_adjoint_commuting(G)
    else:
        raise InvalidArgumentError(f"unknown whitening_grad {whitening_grad!r}")
    gram_kp = kappa_prime(layer.kernel, layer.gram)
    dZ = np.matmul(cache.patches, B.transpose(0, 2, 1)).sum(axis=0) + Z @ (gram_kp * (H + H.T))

    dalpha = None
    if need_alpha:
        dgram = (layer.gram - 1.0) * kappa(layer.kernel, layer.gram)
        dalpha = float(np.sum(dgram * H) + np.sum((cache.cosines - 1.0) * SK * AUP))

    U_prev = None
    if need_input:
        ZB = Z @ B
        # only the diagonal of M^T U P^T - E^T Z B is needed
        diag = np.einsum("npk,npk->nk", cache.pre_pool, UP) - np.einsum("ndk,ndk->nk", cache.patches, ZB)
        denom = cache.norms * cache.raw_norms
        scale = np.divide(diag, denom, out=np.zeros_like(diag), where=cache.raw_norms > 0)
        V = ZB + cache.patches * scale[:, None, :]
        U_prev = combine_patches(V, layer.patch_size, (h, w))
    return LayerGrad(dZ, U_prev, dalpha)


def backprop(net: NetworkParams, caches: list[LayerCache], U_top: np.ndarray, *, need_alpha: bool = False,
             whitening_grad: str = "exact") -> GradientSet:
    """Filter (and optionally alpha) gradients of ``<U_top, I_k>`` summed over the batch."""
    if len(caches) != len(net.layers):
        raise InvalidArgumentError("one cache per layer is required; run network_forward(keep_cache=True)")
    k = len(net.layers)
    dZ = [None] * k
    dalpha = [0.0] * k
    U = U_top
    for j in range(k - 1, -1, -1):
        res = layer_backward(net.layers[j], caches[j], U, need_input=j > 0, need_alpha=need_alpha,
                             whitening_grad=whitening_grad)
        dZ[j] = res.dZ
        if need_alpha:
            dalpha[j] = res.dalpha
        U = res.U_prev
    return GradientSet(dZ, dalpha)


def predict_linear(W: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Scores ``<W_c, I_k>`` for a batch of final maps; returns ``(n, outputs)``."""
    f = np.asarray(features).reshape(len(features), -1)
    return f @ np.atleast_2d(W).T


def network_backward(net: NetworkParams, caches: list[LayerCache], W: np.ndarray, y: np.ndarray,
                     loss=Loss.SQUARED_HINGE, *, need_alpha: bool = False,
                     whitening_grad: str = "exact") -> GradientSet:
    """Gradients of ``sum_n sum_c L(y_nc, <W_c, I_k^n>)`` for a cached batch.

    ``W`` has one row per output (one-vs-all classes share the filters) and
    ``y`` has shape ``(n, outputs)``.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    feats = caches[-1].output if caches else None
    if feats is None:
        raise InvalidArgumentError("network_backward needs at least one layer cache")
    n = feats.shape[0]
    y = np.asarray(y, dtype=float).reshape(n, -1)
    yhat = predict_linear(W, feats)
    val, dl = loss_value_grad(loss, y, yhat)
    U = (dl @ W).reshape(feats.shape)
    grads = backprop(net, caches, U, need_alpha=need_alpha, whitening_grad=whitening_grad)
    grads.dW = dl.T @ feats.reshape(n, -1)
    grads.loss = float(val.sum())
    return grads


def alpha_gradient(net: NetworkParams, caches: list[LayerCache], W: np.ndarray, y: np.ndarray,
                   loss=Loss.SQUARED_HINGE) -> list[float]:
    return network_backward(net, caches, W, y, loss, need_alpha=True).dalpha
