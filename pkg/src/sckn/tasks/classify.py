"""One-vs-all image classification on top of a supervised kernel network."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import InvalidArgumentError
from ..grad import Loss
from ..layer import LayerConfig, NetworkParams, network_forward_batched, unsupervised_init
from ..optim import FitSchedule, LinearModel, fit
from .metrics import error_rate
from .whitening import LocalWhitening

log = logging.getLogger(__name__)


@dataclass
class ClassifierHead:
    net: NetworkParams
    model: LinearModel
    num_classes: int
    whitening: LocalWhitening | None = None

    def __post_init__(self):
        if self.num_classes < 2:
            raise InvalidArgumentError("a classifier needs at least two classes")

    def preprocess(self, images):
        return self.whitening.apply(images) if self.whitening is not None else np.asarray(images, dtype=float)

    def scores(self, images, batch_size: int = 256, preprocessed: bool = False):
        x = images if preprocessed else self.preprocess(images)
        feats = network_forward_batched(self.net, x, batch_size)
        return self.model.scores(feats)

    def predict(self, images, batch_size: int = 256, preprocessed: bool = False):
        # np.argmax breaks ties toward the lowest class index
        return np.argmax(self.scores(images, batch_size, preprocessed), axis=1)


def one_vs_all(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    Y = -np.ones((len(labels), num_classes))
    Y[np.arange(len(labels)), labels] = 1.0
    return Y


def evaluate_error(head: ClassifierHead, images, labels, preprocessed: bool = False) -> float:
    """Test error in percent."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise InvalidArgumentError("cannot evaluate on an empty set")
    return error_rate(head.predict(images, preprocessed=preprocessed), labels)


@dataclass
class ClassifierConfig:
    layers: list[LayerConfig] = field(default_factory=lambda: [
        LayerConfig(32, 3, math.sqrt(2)), LayerConfig(64, 3, 3.0)])
    patches_per_layer: int = 100_000
    kmeans_iters: int = 50
    whiten: bool = True
    lambda_exponents: tuple[int, ...] = tuple(range(-4, 5))
    val_fraction: float = 0.2
    schedule: FitSchedule = field(default_factory=FitSchedule)
    solver_tol: float = 1e-4
    solver_epochs: int = 200
    seed: int = 0


def _fit_head(net, x, labels, num_classes, lam, config, callback=None):
    model = LinearModel(lam=lam, loss=Loss.SQUARED_HINGE, tol=config.solver_tol,
                        max_epochs=config.solver_epochs, seed=config.seed)
    return fit(net, x, one_vs_all(labels, num_classes), model, config.schedule, callback=callback)


def train_classifier(config: ClassifierConfig, images, labels, num_classes: int | None = None):
    """Unsupervised initialization, lambda/epoch selection on a validation
    split, then retraining on the whole training set.

    Returns ``(head, metrics)``; ``metrics`` holds the selected ``lam`` and
    epoch count, validation errors per lambda, and the final training history.
    """
    images = np.asarray(images, dtype=float)
    labels = np.asarray(labels, dtype=int)
    num_classes = int(num_classes or labels.max() + 1)
    rng = np.random.default_rng(config.seed)

    whitening = LocalWhitening(seed=config.seed).fit(images) if config.whiten else None
    x = whitening.apply(images) if whitening else images
    net0 = unsupervised_init(config.layers, x, config.patches_per_layer, seed=config.seed,
                             kmeans_iters=config.kmeans_iters)

    n = len(x)
    metrics = dict(val_errors={})
    epochs = config.schedule.epochs
    if len(config.lambda_exponents) > 1 and config.val_fraction > 0:
        perm = rng.permutation(n)
        n_val = max(1, int(round(config.val_fraction * n)))
        val, tr = perm[:n_val], perm[n_val:]
        best = (math.inf, None, 0)
        for i in config.lambda_exponents:
            lam = 2.0 ** i / len(tr)
            per_epoch = {}

            def track(epoch, net, model, record, per_epoch=per_epoch):
                head = ClassifierHead(net, model, num_classes)
                per_epoch[epoch] = evaluate_error(head, x[val], labels[val], preprocessed=True)

            _fit_head(net0, x[tr], labels[tr], num_classes, lam, config, track)
            ep, err = min(per_epoch.items(), key=lambda kv: (kv[1], kv[0]))
            metrics["val_errors"][i] = err
            log.info("lambda 2^%d/n: best validation error %.2f%% at epoch %d", i, err, ep)
            if err < best[0]:
                best = (err, i, ep)
        exponent, epochs = best[1], best[2]
        metrics["val_error"] = best[0]
    else:
        exponent = config.lambda_exponents[0]
    lam = 2.0 ** exponent / n
    final_cfg = replace(config, schedule=replace(config.schedule, epochs=epochs))
    res = _fit_head(net0, x, labels, num_classes, lam, final_cfg)
    head = ClassifierHead(res.net, res.head, num_classes, whitening)
    metrics.update(lam=lam, lambda_exponent=exponent, epochs=epochs, history=res.history,
                   init_net=net0)
    return head, metrics


def _initial_model(net, x, labels, num_classes, lam, config):
    model = LinearModel(lam=lam, loss=Loss.SQUARED_HINGE, tol=config.solver_tol,
                        max_epochs=config.solver_epochs, seed=config.seed)
    model.solve(net, x, one_vs_all(labels, num_classes))
    return model


def fit_unsupervised_head(net, images, labels, num_classes, lam, config: ClassifierConfig,
                          whitening=None) -> ClassifierHead:
    """Linear one-vs-all classifier on a frozen network (no filter updates)."""
    x = whitening.apply(images) if whitening is not None else np.asarray(images, dtype=float)
    return ClassifierHead(net, _initial_model(net, x, labels, num_classes, lam, config), num_classes, whitening)


def compare_to_baselines(config: ClassifierConfig, train_images, train_labels, test_images, test_labels,
                         num_classes: int | None = None) -> dict:
    """Test errors of the supervised network, of its own unsupervised
    initialization (same lambda, frozen filters) and of a linear classifier on
    whitened pixels selected the same way."""
    train_labels = np.asarray(train_labels, dtype=int)
    num_classes = int(num_classes or train_labels.max() + 1)
    linear_cfg = replace(config, layers=[], schedule=replace(config.schedule, epochs=0))
    linear, _ = train_classifier(linear_cfg, train_images, train_labels, num_classes)
    head, metrics = train_classifier(config, train_images, train_labels, num_classes)
    init = fit_unsupervised_head(metrics["init_net"], train_images, train_labels, num_classes, metrics["lam"],
                                 config, head.whitening)
    return dict(supervised=evaluate_error(head, test_images, test_labels),
                unsupervised=evaluate_error(init, test_images, test_labels),
                linear=evaluate_error(linear, test_images, test_labels),
                lambda_exponent=metrics["lambda_exponent"], epochs=metrics["epochs"])
