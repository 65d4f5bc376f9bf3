"""Dataset ingestion: CIFAR-10 binary batches, image folders, synthetic gratings."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError, FormatError, InvalidArgumentError
from .images import read_image

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILES = ["test_batch.bin"]


def parse_cifar10_bytes(buf: bytes, num_classes: int = 10):
    """Decode CIFAR-10 binary records into ``(n, 3, 32, 32)`` floats in [0, 1] and labels."""
    n, rest = divmod(len(buf), CIFAR_RECORD)
    if rest:
        raise FormatError(f"truncated record: {rest} of {CIFAR_RECORD} bytes", n * CIFAR_RECORD)
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(n, CIFAR_RECORD)
    labels = raw[:, 0].astype(int)
    bad = np.nonzero(labels >= num_classes)[0]
    if len(bad):
        raise FormatError(f"label byte {labels[bad[0]]} out of range", int(bad[0]) * CIFAR_RECORD)
    images = raw[:, 1:].reshape(n, 3, 32, 32).astype(float) / 255.0
    return images, labels


def load_cifar10(path, split: str = "train"):
    """Load a CIFAR-10 split from the directory holding the binary batches,
    or from a single batch file."""
    path = Path(path)
    if split not in ("train", "test"):
        raise InvalidArgumentError(f"unknown split {split!r}")
    if path.is_file():
        files = [path]
    else:
        names = CIFAR_TRAIN_FILES if split == "train" else CIFAR_TEST_FILES
        files = [path / name for name in names]
        missing = [str(f) for f in files if not f.is_file()]
        if missing:
            raise DataError(f"missing CIFAR-10 batch files: {', '.join(missing)}")
    images, labels = [], []
    for f in files:
        try:
            x, y = parse_cifar10_bytes(f.read_bytes())
        except FormatError as err:
            raise FormatError(f"{f}: {err.args[0].split(' (at byte')[0]}", err.offset) from err
        images.append(x)
        labels.append(y)
    return np.concatenate(images), np.concatenate(labels)


def load_image_folder(path, gray: bool = False):
    """Images under ``path/<class name>/`` with classes in sorted name order.

    All images must share one size. Returns ``(images, labels, class_names)``
    with images as ``(n, channels, H, W)`` floats in [0, 1].
    """
    path = Path(path)
    classes = sorted(p.name for p in path.iterdir() if p.is_dir()) if path.is_dir() else []
    if not classes:
        raise DataError(f"{path}: no class subdirectories")
    images, labels = [], []
    for k, name in enumerate(classes):
        for f in sorted((path / name).iterdir()):
            if f.suffix.lower() not in (".png", ".pgm", ".ppm", ".pnm"):
                continue
            im = read_image(f).astype(float) / 255.0
            if gray and im.ndim == 3:
                im = im @ np.array([0.299, 0.587, 0.114])
            im = im[None] if im.ndim == 2 else np.moveaxis(im, -1, 0)
            images.append(im)
            labels.append(k)
    if not images:
        raise DataError(f"{path}: no images found")
    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        raise DataError(f"{path}: images differ in shape {sorted(shapes)}")
    return np.stack(images), np.array(labels), classes


def make_gratings(n: int, num_classes: int = 2, size: int = 16, noise: float = 0.1, seed=0):
    """Oriented sinusoidal gratings, one orientation per class, random phase
    and frequency. Returns ``(n, 1, size, size)`` images and labels."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    theta = labels * math.pi / num_classes
    freq = rng.uniform(0.15, 0.3, size=n) * 2 * math.pi
    phase = rng.uniform(0, 2 * math.pi, size=n)
    proj = np.cos(theta)[:, None, None] * xx + np.sin(theta)[:, None, None] * yy
    images = np.sin(freq[:, None, None] * proj + phase[:, None, None])
    images = images + noise * rng.standard_normal(images.shape)
    return images[:, None], labels


@dataclass
class DatasetSpec:
    kind: str  # "cifar10-binary", "image-folder" or "synthetic"
    path: str | None = None
    num_classes: int = 10
    split: str = "train"
    size: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("cifar10-binary", "image-folder", "synthetic"):
            raise InvalidArgumentError(f"unknown dataset kind {self.kind!r}")
        if self.kind != "synthetic" and (self.path is None or not Path(self.path).exists()):
            raise DataError(f"dataset path {self.path!r} does not exist")


def load_dataset(spec: DatasetSpec):
    """Return ``(images, labels)`` for a dataset description."""
    if spec.kind == "cifar10-binary":
        return load_cifar10(spec.path, spec.split)
    if spec.kind == "image-folder":
        images, labels, _ = load_image_folder(spec.path)
        return images, labels
    return make_gratings(spec.size, spec.num_classes, seed=spec.seed)
