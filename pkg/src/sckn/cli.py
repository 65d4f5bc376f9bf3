"""Command-line interface.

Every successful command prints one machine-readable ``RESULT key=value ...``
line. Usage errors exit with status 2, runtime failures with status 1.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import SCKNError
from .grad import backprop
from .gradcheck import random_unit_columns, run_suite
from .io.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .io.config import load_config
from .io.datasets import DatasetSpec, load_dataset
from .io.images import read_image, write_image
from .layer import LayerConfig, LayerParams, NetworkParams, network_forward, unsupervised_init
from .optim import FitSchedule
from .tasks.classify import ClassifierConfig, ClassifierHead, evaluate_error, fit_unsupervised_head, train_classifier
from .tasks.superres import SrConfig, SrModel, luminance, sr_upscale, train_sr
from .tasks.whitening import LocalWhitening

log = logging.getLogger("sckn")

GRADCHECK_TOL = 1e-3


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def result_line(**fields) -> str:
    return "RESULT " + " ".join(f"{k}={_fmt(v)}" for k, v in fields.items())


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


class _Options:
    """Command-line values, then config-file values, then defaults."""

    def __init__(self, args, config: dict):
        self.args = args
        self.config = config

    def get(self, name, default=None, cast=None):
        value = getattr(self.args, name, None)
        if value is None:
            value = self.config.get(name, default)
        if cast is not None and value is not None:
            value = cast(value)
        return value


def _as_list(value, cast=float):
    if value is None:
        return None
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    if not isinstance(value, (list, tuple)):
        value = [value]
    return [cast(v) for v in value]


def _layer_configs(opts, filters_default, subsampling_default) -> list[LayerConfig]:
    filters = _as_list(opts.get("filters", filters_default), int)
    subs = [None if s.lower() in ("none", "0", "0.0") else float(s)
            for s in _as_list(opts.get("subsampling", subsampling_default), str)]
    if len(subs) != len(filters):
        raise SCKNError("filters and subsampling lists differ in length")
    patch = opts.get("patch_size", 3, int)
    alpha = opts.get("alpha", 4.0, float)
    return [LayerConfig(p, patch, s, alpha) for p, s in zip(filters, subs)]


def _dataset(opts, split="train"):
    kind = opts.get("data", "synthetic")
    spec = DatasetSpec(kind, opts.get("data_path"), opts.get("classes", 2, int),
                       opts.get("split", split), opts.get("size", 400, int), opts.get("seed", 0, int))
    images, labels = load_dataset(spec)
    limit = opts.get("limit", None, int)
    if limit:
        images, labels = images[:limit], labels[:limit]
    return images, labels


def _classifier_config(opts) -> ClassifierConfig:
    seed = opts.get("seed", 0, int)
    schedule = FitSchedule(epochs=opts.get("epochs", 10, int), eta=opts.get("eta", 10.0, float),
                           batch_size=opts.get("batch_size", 128, int), seed=seed,
                           learn_alpha=bool(opts.get("learn_alpha", False)))
    exps = tuple(_as_list(opts.get("lambda_exponents", "-4,-3,-2,-1,0,1,2,3,4"), int))
    return ClassifierConfig(
        layers=_layer_configs(opts, "32,64", f"{math.sqrt(2)},3"),
        patches_per_layer=opts.get("patches", 100_000, int),
        kmeans_iters=opts.get("kmeans_iters", 50, int),
        whiten=bool(opts.get("whiten", True)),
        lambda_exponents=exps,
        val_fraction=opts.get("val_fraction", 0.2, float),
        schedule=schedule,
        seed=seed,
    )


def cmd_train_unsup(opts):
    images, labels = _dataset(opts)
    cfg = _classifier_config(opts)
    whitening = LocalWhitening(seed=cfg.seed).fit(images) if cfg.whiten else None
    x = whitening.apply(images) if whitening else images
    net = unsupervised_init(cfg.layers, x, cfg.patches_per_layer, seed=cfg.seed, kmeans_iters=cfg.kmeans_iters)
    num_classes = int(labels.max() + 1)
    lam = 2.0 ** cfg.lambda_exponents[len(cfg.lambda_exponents) // 2] / len(images)
    head = fit_unsupervised_head(net, images, labels, num_classes, lam, cfg, whitening)
    err = evaluate_error(head, images, labels)
    out = opts.get("out")
    if out:
        save_checkpoint(out, Checkpoint(net, head, [], cfg.seed))
    return dict(train_error=err, samples=len(images), filters_digest=_digest(*[l.Z for l in net.layers]))


def cmd_train_sup(opts):
    images, labels = _dataset(opts)
    cfg = _classifier_config(opts)
    head, metrics = train_classifier(cfg, images, labels)
    err = evaluate_error(head, images, labels)
    out = opts.get("out")
    history = [dict(r) for r in metrics["history"]]
    if out:
        save_checkpoint(out, Checkpoint(head.net, head, history, cfg.seed))
    return dict(train_error=err, lambda_exponent=metrics["lambda_exponent"], epochs=metrics["epochs"],
                objective=history[-1]["objective"], filters_digest=_digest(*[l.Z for l in head.net.layers]))


def cmd_eval(opts):
    ckpt = load_checkpoint(opts.get("checkpoint"))
    if not isinstance(ckpt.head, ClassifierHead):
        raise SCKNError("checkpoint does not hold a classifier")
    images, labels = _dataset(opts, split="test")
    return dict(error=evaluate_error(ckpt.head, images, labels), samples=len(images))


def _sr_images(opts):
    folder = opts.get("images")
    if folder is None:
        raise SCKNError("sr-train needs --images DIR with PNG/PGM/PPM training images")
    paths = sorted(p for p in Path(folder).iterdir() if p.suffix.lower() in (".png", ".pgm", ".ppm"))
    if not paths:
        raise SCKNError(f"no images in {folder}")
    return [luminance(read_image(p)) / 255.0 for p in paths]


def cmd_sr_train(opts):
    images = _sr_images(opts)
    seed = opts.get("seed", 0, int)
    layers = [LayerConfig(opts.get("filters", 32, int), opts.get("patch_size", 3, int), None,
                          opts.get("alpha", 4.0, float)) for _ in range(opts.get("layers", 3, int))]
    cfg = SrConfig(layers=layers, patches=opts.get("patches", 20_000, int),
                   patches_per_layer=opts.get("init_patches", 100_000, int), seed=seed,
                   lam=opts.get("lam", 1e-6, float))
    cfg.schedule = replace(cfg.schedule, epochs=opts.get("epochs", cfg.schedule.epochs, int),
                           eta=opts.get("eta", cfg.schedule.eta, float), seed=seed)
    model, history = train_sr(cfg, images)
    out = opts.get("out")
    if out:
        save_checkpoint(out, Checkpoint(model.net, model, history, seed))
    return dict(objective=history[-1]["objective"], epochs=len(history) - 1,
                head_digest=_digest(model.head.w))


def cmd_sr_apply(opts):
    ckpt = load_checkpoint(opts.get("checkpoint"))
    if not isinstance(ckpt.head, SrModel):
        raise SCKNError("checkpoint does not hold a super-resolution model")
    factor = opts.get("factor", 2, int)
    image = read_image(opts.get("input")).astype(float)
    out = sr_upscale(ckpt.head, image, factor)
    write_image(opts.get("output"), out)
    return dict(height=out.shape[0], width=out.shape[1], factor=factor)


def cmd_gradcheck(opts):
    reports = run_suite(opts.get("seed", 0, int), opts.get("step", 1e-4, float))
    worst = max(r.max_error for r in reports.values())
    fields = {f"{name}_max_rel_error": r.max_error for name, r in reports.items()}
    fields.update(max_rel_error=worst, entries=sum(r.entries for r in reports.values()),
                  passed=worst < GRADCHECK_TOL)
    if worst >= GRADCHECK_TOL:
        print(result_line(**fields))
        raise SCKNError(f"gradient check failed: max relative error {worst:.3g} >= {GRADCHECK_TOL}")
    return fields


def cmd_kernel_bench(opts):
    seed = opts.get("seed", 0, int)
    rng = np.random.default_rng(seed)
    filters = opts.get("filters", 64, int)
    size = opts.get("size", 32, int)
    batch = opts.get("batch_size", 32, int)
    repeats = opts.get("repeats", 3, int)
    net = NetworkParams([LayerParams(random_unit_columns(rng, 27, filters)),
                         LayerParams(random_unit_columns(rng, 9 * filters, filters))], 3)
    x = rng.standard_normal((batch, 3, size, size))
    fwd = bwd = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        feats, caches = network_forward(net, x, keep_cache=True)
        t1 = time.perf_counter()
        grads = backprop(net, caches, feats)
        t2 = time.perf_counter()
        fwd, bwd = min(fwd, t1 - t0), min(bwd, t2 - t1)
    # wall-clock numbers vary between runs, so they stay off the RESULT line
    print(f"TIMING forward_s={fwd:.4f} backward_s={bwd:.4f} images_per_s={batch / (fwd + bwd):.1f}")
    return dict(batch=batch, filters=filters, size=size, output_digest=_digest(feats, *grads.dZ))


COMMANDS = {
    "train-unsup": (cmd_train_unsup, "unsupervised filters plus a linear classifier"),
    "train-sup": (cmd_train_sup, "supervised training with lambda/epoch selection"),
    "eval": (cmd_eval, "test error of a classifier checkpoint"),
    "sr-train": (cmd_sr_train, "train a super-resolution model"),
    "sr-apply": (cmd_sr_apply, "upscale an image with a super-resolution checkpoint"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of the analytic gradients"),
    "kernel-bench": (cmd_kernel_bench, "time forward and backward passes"),
}


def _global_flags(default) -> argparse.ArgumentParser:
    # subcommands get SUPPRESS defaults so flags given before the command survive
    common = argparse.ArgumentParser(add_help=False, argument_default=default)
    common.add_argument("--config", help="flat 'key = value' configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="cap on BLAS threads")
    common.add_argument("--deterministic", action="store_true", default=default,
                        help="single-threaded, fixed reduction order")
    common.add_argument("-v", "--verbose", action="store_true", default=default)
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sckn", description=__doc__.splitlines()[0],
                                     parents=[_global_flags(None)])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub_flags = _global_flags(argparse.SUPPRESS)
    ps = {name: sub.add_parser(name, help=help_, parents=[sub_flags]) for name, (_, help_) in COMMANDS.items()}

    for name in ("train-unsup", "train-sup", "eval"):
        p = ps[name]
        p.add_argument("--data", choices=["synthetic", "cifar10-binary", "image-folder"])
        p.add_argument("--data-path", dest="data_path")
        p.add_argument("--split", choices=["train", "test"])
        p.add_argument("--size", type=int, help="number of synthetic samples")
        p.add_argument("--classes", type=int, help="number of synthetic classes")
        p.add_argument("--limit", type=int, help="use only the first N samples")
    for name in ("train-unsup", "train-sup"):
        p = ps[name]
        p.add_argument("--filters", help="comma-separated filters per layer")
        p.add_argument("--subsampling", help="comma-separated pooling factors ('none' disables)")
        p.add_argument("--patch-size", dest="patch_size", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--patches", type=int, help="patches per layer for K-means")
        p.add_argument("--kmeans-iters", dest="kmeans_iters", type=int)
        p.add_argument("--lambda-exponents", dest="lambda_exponents", help="i values of lambda = 2^i/n")
        p.add_argument("--out", help="checkpoint path")
    p = ps["train-sup"]
    p.add_argument("--epochs", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    ps["eval"].add_argument("--checkpoint", required=True)

    p = ps["sr-train"]
    p.add_argument("--images", help="directory of training images")
    p.add_argument("--layers", type=int)
    p.add_argument("--filters", type=int)
    p.add_argument("--patches", type=int, help="training patches")
    p.add_argument("--init-patches", dest="init_patches", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--out", help="checkpoint path")
    p = ps["sr-apply"]
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--factor", type=int, choices=[2, 3])

    ps["gradcheck"].add_argument("--step", type=float, help="finite-difference step")
    p = ps["kernel-bench"]
    p.add_argument("--filters", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--repeats", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config) if args.config else {}
    except (OSError, SCKNError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    opts = _Options(args, config)
    logging.basicConfig(level=logging.INFO if opts.get("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    deterministic = bool(opts.get("deterministic", False))
    threads = 1 if deterministic else opts.get("threads", None, int)
    limit = threadpool_limits(limits=threads) if threads else contextlib.nullcontext()
    handler = COMMANDS[args.command][0]
    try:
        with limit:
            fields = handler(opts)
    except (SCKNError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(result_line(**fields))
    return 0


if __name__ == "__main__":
    sys.exit(main())
