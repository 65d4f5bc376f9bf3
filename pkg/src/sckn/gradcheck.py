"""Central finite-difference checks of the analytic filter and kernel gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core_maps import PoolSpec
from .grad import Loss, loss_value_grad, network_backward, predict_linear
from .layer import LayerParams, NetworkParams, network_forward


def random_unit_columns(rng, d: int, p: int) -> np.ndarray:
    Z = rng.standard_normal((d, p))
    return Z / np.linalg.norm(Z, axis=0)


def toy_network(seed=0, filters=(4, 8), subsampling=(1.0, math.sqrt(2)), patch_size=3,
                in_channels=1, alpha=4.0, epsilon=1e-3) -> NetworkParams:
    """Small two-layer network with random unit filters."""
    rng = np.random.default_rng(seed)
    layers, c = [], in_channels
    for p, s in zip(filters, subsampling):
        pool = PoolSpec(s) if s is not None else None
        layers.append(LayerParams(random_unit_columns(rng, c * patch_size ** 2, p), alpha, patch_size,
                                  pool, epsilon))
        c = p
    return NetworkParams(layers, in_channels)


def toy_problem(net: NetworkParams, loss=Loss.SQUARED_HINGE, n: int = 2, size: int = 6, outputs: int = 2,
                seed=0):
    """Inputs, weights and targets whose losses all have nonzero derivative.

    For the squared hinge the scores are kept well inside the margin so the
    loss is smooth around the evaluation point.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, net.input_channels, size, size))
    feats, _ = network_forward(net, x)
    W = rng.standard_normal((outputs, feats[0].size))
    scores = predict_linear(W, feats)
    W *= 0.5 / np.abs(scores).max()
    y = rng.choice([-1.0, 1.0], size=(n, outputs))
    if Loss(loss) is Loss.SQUARE:
        y = rng.standard_normal((n, outputs))
    return x, W, y


def total_loss(net, x, W, y, loss) -> float:
    feats, _ = network_forward(net, x)
    val, _ = loss_value_grad(loss, y, predict_linear(W, feats))
    return float(val.sum())


def relative_error(a, b, floor: float = 1e-8):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@dataclass
class GradCheckReport:
    z_errors: list = field(default_factory=list)      # max relative error per layer
    alpha_errors: list = field(default_factory=list)
    entries: int = 0

    @property
    def max_error(self) -> float:
        return max(self.z_errors + self.alpha_errors, default=0.0)


def check_gradients(net: NetworkParams, x, W, y, loss=Loss.SQUARED_HINGE, h: float = 1e-4,
                    whitening_grad: str = "exact", floor: float = 1e-8) -> GradCheckReport:
    """Compare every filter entry and every alpha against central differences."""
    loss = Loss(loss)
    _, caches = network_forward(net, x, keep_cache=True)
    grads = network_backward(net, caches, W, y, loss, need_alpha=True, whitening_grad=whitening_grad)
    probe = net.copy()
    for layer in probe.layers:
        layer.require_unit = False
    report = GradCheckReport()
    for j, layer in enumerate(probe.layers):
        Z0 = layer.Z.copy()
        fd = np.zeros_like(Z0)
        for idx in np.ndindex(Z0.shape):
            Zp, Zm = Z0.copy(), Z0.copy()
            Zp[idx] += h
            Zm[idx] -= h
            layer.Z = Zp
            fp = total_loss(probe, x, W, y, loss)
            layer.Z = Zm
            fm = total_loss(probe, x, W, y, loss)
            fd[idx] = (fp - fm) / (2 * h)
        layer.Z = Z0
        report.z_errors.append(float(relative_error(grads.dZ[j], fd, floor).max()))
        report.entries += Z0.size

        a0 = layer.alpha
        layer.alpha = a0 + h
        fp = total_loss(probe, x, W, y, loss)
        layer.alpha = a0 - h
        fm = total_loss(probe, x, W, y, loss)
        layer.alpha = a0
        report.alpha_errors.append(float(relative_error(grads.dalpha[j], (fp - fm) / (2 * h), floor)))
        report.entries += 1
    return report


def run_suite(seed=0, h: float = 1e-4) -> dict:
    """The two-layer toy check for the squared hinge and square losses."""
    net = toy_network(seed)
    out = {}
    for loss in (Loss.SQUARED_HINGE, Loss.SQUARE):
        x, W, y = toy_problem(net, loss, seed=seed)
        out[loss.value] = check_gradients(net, x, W, y, loss, h)
    return out
