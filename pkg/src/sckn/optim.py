"""Training engine: preconditioned SGD on the sphere for the filters, an
incremental dual solver for the convex prediction layer, and the alternating
scheme with learning-rate backtracking and an active set of samples."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DataError, InvalidArgumentError, SingularMatrixError, StepDegenerateError
from .grad import Loss, backprop, loss_value_grad
from .layer import NetworkParams, network_forward, network_forward_batched, sample_layer_patches

log = logging.getLogger(__name__)

MAX_STEP_HALVINGS = 60


# --------------------------------------------------------------------------
# preconditioning and the sphere step


@dataclass(frozen=True, eq=False)
class Preconditioner:
    Q: np.ndarray


def compute_preconditioner(patches: np.ndarray, ridge: float = 0.01) -> Preconditioner:
    """Inverse of the empirical covariance of the columns of ``patches``,
    regularized by ``ridge * tr(Cov) / d`` on the diagonal."""
    X = np.asarray(patches, dtype=float)
    d, n = X.shape
    if n < d + 1:
        raise DataError(f"need at least {d + 1} patch columns to estimate a {d}x{d} covariance, got {n}")
    cov = np.cov(X)
    cov = np.atleast_2d(cov)
    reg = cov + ridge * np.trace(cov) / d * np.eye(d)
    w, V = np.linalg.eigh(0.5 * (reg + reg.T))
    if w[0] <= 1e-12 * max(w[-1], 1e-300):
        raise SingularMatrixError("patch covariance is singular; use a positive ridge")
    Q = (V / w) @ V.T
    return Preconditioner(0.5 * (Q + Q.T))


def sphere_step(z: np.ndarray, grad: np.ndarray, Q, eta: float) -> np.ndarray:
    """``Proj[z - eta (I - Q z z^T / z^T Q z) Q grad]`` onto the unit sphere.

    ``z`` and ``grad`` may be single vectors or matrices whose columns are
    updated independently. ``Q`` may be a :class:`Preconditioner`, a matrix,
    or ``None`` for the identity.
    """
    z = np.asarray(z, dtype=float)
    g = np.asarray(grad, dtype=float)
    Qm = Q.Q if isinstance(Q, Preconditioner) else Q
    if Qm is None:
        Qz, Qg = z, g
    else:
        Qz, Qg = Qm @ z, Qm @ g
    zQz = np.sum(z * Qz, axis=0)
    if np.any(zQz <= 0):
        raise InvalidArgumentError("z^T Q z must be positive")
    v = Qg - Qz * (np.sum(z * Qg, axis=0) / zQz)
    out = z - eta * v
    norms = np.linalg.norm(out, axis=0)
    # v is tangent to z, so |out| >= 1 for finite input; only overflow or NaN can land here
    if not np.all(np.isfinite(norms)) or np.any(norms == 0):
        raise StepDegenerateError("sphere step produced a zero or non-finite vector")
    return out / norms


def tangent_direction(z, grad, Q=None):
    """The pre-projection direction ``(I - Q z z^T / z^T Q z) Q grad``."""
    Qm = Q.Q if isinstance(Q, Preconditioner) else Q
    Qz = z if Qm is None else Qm @ z
    Qg = grad if Qm is None else Qm @ grad
    return Qg - Qz * (np.sum(z * Qg, axis=0) / np.sum(z * Qz, axis=0))


# --------------------------------------------------------------------------
# convex prediction layer


def _sdca_delta(loss: Loss, y, margin_pred, a, q, iters=20):
    """Closed-form (or Newton) dual coordinate increment for all outputs at once.

    Primal per-sample term is ``phi(x^T w)``; ``a`` is the current dual
    variable, ``q = ||x||^2 / (lam n)``.
    """
    if loss is Loss.SQUARE or loss is Loss.SQUARED_HINGE:
        delta = (y - margin_pred - 0.5 * a) / (0.5 + q)
        if loss is Loss.SQUARED_HINGE:
            delta = y * np.maximum(0.0, y * (a + delta)) - a
        return delta
    # logistic: maximize over b = y*a_new in (0, 1)
    b0 = np.clip(y * a, 1e-12, 1 - 1e-12)
    b = b0.copy()
    for _ in range(iters):
        # Newton ascent on the concave 1-D dual in b
        grad = -np.log(b / (1 - b)) - y * margin_pred - q * (b - b0)
        hess = -1.0 / (b * (1 - b)) - q
        b = np.clip(b - grad / hess, 1e-12, 1 - 1e-12)
    return y * b - a


@dataclass
class SolveResult:
    W: np.ndarray
    dual: np.ndarray
    objective: float
    grad_norm: float
    epochs: int


def objective_linear(W, X, Y, loss, lam) -> float:
    val, _ = loss_value_grad(loss, Y, X @ W.T)
    return float(val.sum() / X.shape[0] + 0.5 * lam * np.sum(W * W))


def objective_grad_linear(W, X, Y, loss, lam) -> np.ndarray:
    _, dl = loss_value_grad(loss, Y, X @ W.T)
    return dl.T @ X / X.shape[0] + lam * W


def solve_W_convex(features, labels, loss=Loss.SQUARED_HINGE, lam: float = 1e-3, tol: float = 1e-6,
                   max_epochs: int = 500, seed=0, dual0: np.ndarray | None = None,
                   method: str = "sdca") -> SolveResult:
    """Minimize ``(1/n) sum_i sum_c L(y_ic, <W_c, x_i>) + lam/2 ||W||_F^2``.

    ``features`` is ``(n, d)`` (maps are flattened), ``labels`` is ``(n, C)``
    or ``(n,)``. The default solver is stochastic dual coordinate ascent over
    samples, updating all ``C`` outputs at once; ``method="gd"`` runs
    full-batch accelerated gradient descent instead. Stops when
    ``||grad||_F <= tol * max(1, ||W||_F)``; raises :class:`ConvergenceError`
    carrying the last :class:`SolveResult` otherwise.
    """
    loss = Loss(loss)
    X = np.asarray(features, dtype=float).reshape(len(features), -1)
    Y = np.asarray(labels, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, d = X.shape
    if n == 0:
        raise DataError("no samples")
    if not lam > 0:
        raise InvalidArgumentError("lam must be positive")
    C = Y.shape[1]

    def certify(W):
        g = objective_grad_linear(W, X, Y, loss, lam)
        return float(np.linalg.norm(g))

    if method == "gd":
        return _solve_gd(X, Y, loss, lam, tol, max_epochs * 20, certify)
    if method != "sdca":
        raise InvalidArgumentError(f"unknown method {method!r}")

    rng = np.random.default_rng(seed)
    a = np.zeros((n, C)) if dual0 is None else np.array(dual0, dtype=float)
    if a.shape != (n, C):
        raise InvalidArgumentError("dual warm start has the wrong shape")
    if loss is not Loss.SQUARE:
        # keep the warm start dual-feasible
        a = Y * np.clip(Y * a, 0.0, None if loss is Loss.SQUARED_HINGE else 1.0)
    scale = 1.0 / (lam * n)
    W = scale * (a.T @ X)
    sq = np.einsum("ij,ij->i", X, X) * scale
    gnorm = math.inf
    for epoch in range(1, max_epochs + 1):
        for i in rng.permutation(n):
            if sq[i] == 0.0:
                continue
            x = X[i]
            delta = _sdca_delta(loss, Y[i], W @ x, a[i], sq[i])
            a[i] += delta
            W += np.outer(delta * scale, x)
        gnorm = certify(W)
        if gnorm <= tol * max(1.0, float(np.linalg.norm(W))):
            return SolveResult(W, a, objective_linear(W, X, Y, loss, lam), gnorm, epoch)
    res = SolveResult(W, a, objective_linear(W, X, Y, loss, lam), gnorm, max_epochs)
    raise ConvergenceError(f"SDCA did not reach tol {tol:g} in {max_epochs} epochs (grad {gnorm:.3e})", res)


def _solve_gd(X, Y, loss, lam, tol, max_iter, certify):
    n, d = X.shape
    curv = {Loss.SQUARE: 2.0, Loss.SQUARED_HINGE: 2.0, Loss.LOGISTIC: 0.25}[loss]
    smooth = curv * np.linalg.norm(X, 2) ** 2 / n + lam
    W = np.zeros((Y.shape[1], d))
    V = W.copy()
    t = 1.0
    gnorm = math.inf
    for it in range(1, max_iter + 1):
        W_new = V - objective_grad_linear(V, X, Y, loss, lam) / smooth
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        V = W_new + ((t - 1) / t_new) * (W_new - W)
        W, t = W_new, t_new
        if it % 10 == 0:
            gnorm = certify(W)
            if gnorm <= tol * max(1.0, float(np.linalg.norm(W))):
                return SolveResult(W, np.zeros((n, Y.shape[1])), objective_linear(W, X, Y, loss, lam), gnorm, it)
    res = SolveResult(W, np.zeros((n, Y.shape[1])), objective_linear(W, X, Y, loss, lam), gnorm, max_iter)
    raise ConvergenceError(f"gradient descent did not reach tol {tol:g}", res)


# --------------------------------------------------------------------------
# prediction heads driven by the trainer


class LinearModel:
    """Prediction ``<W_c, I_k>`` per output on the flattened final map.

    One row of ``W`` per output; one-vs-all classification shares the network.
    """

    def __init__(self, W=None, lam: float = 1e-3, loss=Loss.SQUARED_HINGE, tol: float = 1e-5,
                 max_epochs: int = 300, seed=0):
        self.W = None if W is None else np.atleast_2d(np.asarray(W, dtype=float))
        self.lam = float(lam)
        self.loss = Loss(loss)
        self.tol = tol
        self.max_epochs = max_epochs
        self.seed = seed
        self._dual = None

    @property
    def deactivates(self) -> bool:
        return self.loss is Loss.SQUARED_HINGE

    def copy(self):
        return copy.deepcopy(self)

    def scores(self, features):
        f = np.asarray(features).reshape(len(features), -1)
        return f @ self.W.T

    def objective_terms(self, features, targets):
        val, _ = loss_value_grad(self.loss, targets, self.scores(features))
        return val.sum(axis=1)

    def cotangent(self, features, targets):
        """Per-sample losses, output cotangent ``dL/dI_k`` and the zero-gradient mask."""
        val, dl = loss_value_grad(self.loss, targets, self.scores(features))
        U = (dl @ self.W).reshape(features.shape)
        return val.sum(axis=1), U, np.all(dl == 0, axis=1)

    def solve(self, net, data, targets, batch_size=256) -> float:
        feats = network_forward_batched(net, data, batch_size).reshape(len(data), -1)
        targets = np.asarray(targets, dtype=float).reshape(len(data), -1)
        dual0 = self._dual if self._dual is not None and self._dual.shape == targets.shape else None
        try:
            res = solve_W_convex(feats, targets, self.loss, self.lam, self.tol, self.max_epochs,
                                 seed=self.seed, dual0=dual0)
        except ConvergenceError as err:
            log.warning("%s; using last iterate", err)
            res = err.result
        self.W, self._dual = res.W, res.dual
        return res.objective


# --------------------------------------------------------------------------
# alternating trainer


@dataclass
class FitSchedule:
    epochs: int = 100
    eta: float = 10.0
    momentum: float = 0.9
    batch_size: int = 128
    learn_alpha: bool = False
    alpha_eta: float | None = None
    precondition: bool = True
    precond_ridge: float = 0.01
    precond_patches: int = 20_000
    reactivate_fraction: float = 0.1
    min_eta: float = 1e-8
    seed: int = 0
    forward_batch: int = 256


@dataclass
class TrainState:
    eta: float
    momentum: float
    velocity: list
    active: np.ndarray
    rng: np.random.Generator
    alpha_eta: float = 0.0
    alpha_velocity: list = field(default_factory=list)
    epoch: int = 0
    best_objective: float = math.inf
    best_net: NetworkParams | None = None
    best_head: object = None


def init_state(net: NetworkParams, n: int, schedule: FitSchedule) -> TrainState:
    return TrainState(
        eta=schedule.eta,
        momentum=schedule.momentum,
        velocity=[np.zeros_like(layer.Z) for layer in net.layers],
        active=np.ones(n, dtype=bool),
        rng=np.random.default_rng(schedule.seed),
        alpha_eta=schedule.eta if schedule.alpha_eta is None else schedule.alpha_eta,
        alpha_velocity=[0.0] * len(net.layers),
    )


def layer_preconditioners(net: NetworkParams, data, n_patches: int, ridge: float, seed=0) -> list:
    """One inverse patch covariance per layer, from normalized patches of the
    current network."""
    rng = np.random.default_rng(seed)
    out = []
    for j, layer in enumerate(net.layers):
        X = sample_layer_patches(net, data, j, max(n_patches, 2 * layer.patch_dim), layer.patch_size, rng)
        norms = np.linalg.norm(X, axis=0)
        X = X[:, norms > 1e-8] / norms[norms > 1e-8]
        out.append(compute_preconditioner(X, ridge))
    return out


def train_epoch_Z(net: NetworkParams, data, targets, head, state: TrainState, batch_size: int = 128,
                  preconditioners: list | None = None, learn_alpha: bool = False) -> float:
    """One pass of preconditioned projected SGD with momentum over the active samples.

    Filters and (optionally) kernel parameters are updated in place; samples
    whose loss derivative is exactly zero leave the active set. Returns the
    mean minibatch loss seen during the pass (0 if nothing was active).
    """
    idx = np.nonzero(state.active)[0]
    if len(idx) == 0:
        return 0.0
    idx = idx[state.rng.permutation(len(idx))]
    total, count = 0.0, 0
    for start in range(0, len(idx), batch_size):
        batch = idx[start:start + batch_size]
        feats, caches = network_forward(net, data[batch], keep_cache=True)
        vals, U, zero = head.cotangent(feats, targets[batch])
        total += float(vals.sum())
        count += len(batch)
        if head.deactivates:
            state.active[batch[zero]] = False
        if np.all(zero):
            continue
        grads = backprop(net, caches, U, need_alpha=learn_alpha)
        del caches
        for j, layer in enumerate(net.layers):
            g = grads.dZ[j] / len(batch)
            state.velocity[j] = state.momentum * state.velocity[j] + g
            Q = preconditioners[j] if preconditioners else None
            eta = state.eta
            for _ in range(MAX_STEP_HALVINGS):
                try:
                    new_Z = sphere_step(layer.Z, state.velocity[j], Q, eta)
                    break
                except StepDegenerateError:
                    eta *= 0.5
            else:
                raise StepDegenerateError(f"layer {j}: no finite sphere step after {MAX_STEP_HALVINGS} halvings")
            layer.Z = new_Z
            if learn_alpha:
                ga = grads.dalpha[j] / len(batch)
                state.alpha_velocity[j] = state.momentum * state.alpha_velocity[j] + ga
                # keep alpha positive: never shrink by more than half per step
                layer.alpha = max(layer.alpha - state.alpha_eta * state.alpha_velocity[j], 0.5 * layer.alpha)
    return total / max(count, 1)


@dataclass
class FitResult:
    net: NetworkParams
    head: object
    history: list
    halted_early: bool = False


def fit(net: NetworkParams, data, targets, head, schedule: FitSchedule | None = None,
        callback=None) -> FitResult:
    """Alternate exact head solves with one SGD pass over the filters.

    After each pass the full objective is recomputed; if it went up, the
    previous network and head are restored, momentum is reset and the
    learning rate is halved. Training stops at the epoch cap, when the
    learning rate underflows, or when the active set empties.
    ``callback(epoch, net, head, record)`` runs after the initial head solve
    (epoch 0) and after every epoch, with the network and head that training
    continues from.
    """
    schedule = schedule or FitSchedule()
    data = np.asarray(data, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if len(data) == 0:
        raise DataError("cannot fit on an empty dataset")
    net = net.copy()
    head = head.copy()
    state = init_state(net, len(data), schedule)
    Qs = None
    if schedule.precondition and schedule.epochs > 0 and net.layers:
        Qs = layer_preconditioners(net, data, schedule.precond_patches, schedule.precond_ridge, schedule.seed)

    obj = head.solve(net, data, targets, schedule.forward_batch)
    history = [dict(epoch=0, objective=obj, accepted=True, eta=state.eta, active=int(state.active.sum()))]
    state.best_objective, state.best_net, state.best_head = obj, net.copy(), head.copy()
    if callback is not None:
        callback(0, net, head, history[0])
    halted = False
    for epoch in range(1, schedule.epochs + 1):
        state.epoch = epoch
        train_epoch_Z(net, data, targets, head, state, schedule.batch_size, Qs, schedule.learn_alpha)
        emptied = not state.active.any()
        obj = head.solve(net, data, targets, schedule.forward_batch)
        accepted = obj <= state.best_objective
        if accepted:
            state.best_objective, state.best_net, state.best_head = obj, net.copy(), head.copy()
        else:
            net, head = state.best_net.copy(), state.best_head.copy()
            state.eta *= 0.5
            state.alpha_eta *= 0.5
            state.velocity = [np.zeros_like(v) for v in state.velocity]
            state.alpha_velocity = [0.0] * len(net.layers)
        record = dict(epoch=epoch, objective=obj, accepted=accepted, eta=state.eta,
                      active=int(state.active.sum()))
        history.append(record)
        if callback is not None:
            callback(epoch, net, head, record)
        log.info("epoch %d objective %.6g %s eta %.3g active %d", epoch, obj,
                 "accepted" if accepted else "rejected", state.eta, state.active.sum())
        if emptied:
            halted = True
            break
        if state.eta < schedule.min_eta:
            break
        inactive = np.nonzero(~state.active)[0]
        if len(inactive):
            k = int(math.ceil(schedule.reactivate_fraction * len(inactive)))
            state.active[state.rng.choice(inactive, size=k, replace=False)] = True
    return FitResult(state.best_net, state.best_head, history, halted)
