"""Versioned little-endian binary checkpoints.

Layout::

    "SCKN"  u32 version  u32 layer_count  u32 input_channels
    per layer:
        u32 patch_size  u32 patch_dim  u32 filters
        f64 alpha  f64 epsilon
        u8 has_pool [f64 subsampling  f64 beta  f64 radius  u8 normalize]
        f64[patch_dim * filters]  Z in column-major order
    u8 head_kind  head block
    u32 length  UTF-8 JSON training history
    u64 seed

Arrays are written as little-endian f64 regardless of the compute dtype.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core_maps import PoolSpec
from ..errors import FormatError, VersionMismatchError
from ..grad import Loss
from ..layer import LayerParams, NetworkParams
from ..optim import LinearModel
from ..tasks.classify import ClassifierHead
from ..tasks.superres import PixelRegressor, SrModel
from ..tasks.whitening import LocalWhitening

MAGIC = b"SCKN"
VERSION = 1

HEAD_NONE, HEAD_LINEAR, HEAD_CLASSIFIER, HEAD_SR = range(4)
_LOSS_CODES = {Loss.SQUARED_HINGE: 0, Loss.SQUARE: 1, Loss.LOGISTIC: 2}
_LOSSES = {v: k for k, v in _LOSS_CODES.items()}


@dataclass
class Checkpoint:
    net: NetworkParams
    head: object = None  # LinearModel, ClassifierHead, SrModel or None
    history: list = field(default_factory=list)
    seed: int = 0
    version: int = VERSION


class _Writer:
    def __init__(self):
        self.parts = []

    def pack(self, fmt, *values):
        self.parts.append(struct.pack("<" + fmt, *values))

    def matrix(self, M):
        M = np.asarray(M, dtype="<f8")
        self.pack("II", *M.shape)
        self.parts.append(M.tobytes(order="F"))

    def bytes(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated checkpoint: needed {n} bytes, {len(self.buf) - self.pos} left",
                              self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def one(self, fmt):
        return self.unpack(fmt)[0]

    def array(self, shape):
        count = int(np.prod(shape))
        data = np.frombuffer(self.take(8 * count), dtype="<f8")
        return data.reshape(shape, order="F").astype(float)

    def matrix(self):
        return self.array(self.unpack("II"))


def _write_linear(w: _Writer, model: LinearModel):
    w.pack("BddI", _LOSS_CODES[model.loss], model.lam, model.tol, model.max_epochs)
    w.pack("B", model.W is not None)
    if model.W is not None:
        w.matrix(model.W)


def _read_linear(r: _Reader) -> LinearModel:
    code, lam, tol, max_epochs = r.unpack("BddI")
    if code not in _LOSSES:
        raise FormatError(f"unknown loss code {code}", r.pos - 21)
    W = r.matrix() if r.one("B") else None
    return LinearModel(W, lam=lam, loss=_LOSSES[code], tol=tol, max_epochs=max_epochs)


def _write_head(w: _Writer, head):
    if head is None:
        w.pack("B", HEAD_NONE)
    elif isinstance(head, LinearModel):
        w.pack("B", HEAD_LINEAR)
        _write_linear(w, head)
    elif isinstance(head, ClassifierHead):
        w.pack("BI", HEAD_CLASSIFIER, head.num_classes)
        _write_linear(w, head.model)
        wh = head.whitening
        w.pack("B", wh is not None and wh.fitted)
        if wh is not None and wh.fitted:
            w.pack("IIdIq", wh.window, wh.patch_size, wh.eps_rel, wh.max_patches, wh.seed)
            w.matrix(wh.filters)
    elif isinstance(head, SrModel):
        w.pack("BIId", HEAD_SR, head.scale, head.mean_size, head.head.lam)
        w.matrix(np.asarray(head.head.w, dtype=float)[:, None])
    else:
        raise TypeError(f"cannot serialize head of type {type(head).__name__}")


def _read_head(r: _Reader, net: NetworkParams):
    at = r.pos
    kind = r.one("B")
    if kind == HEAD_NONE:
        return None
    if kind == HEAD_LINEAR:
        return _read_linear(r)
    if kind == HEAD_CLASSIFIER:
        num_classes = r.one("I")
        model = _read_linear(r)
        whitening = None
        if r.one("B"):
            window, patch, eps_rel, max_patches, seed = r.unpack("IIdIq")
            whitening = LocalWhitening(window, patch, eps_rel, max_patches, seed, r.matrix())
        return ClassifierHead(net, model, num_classes, whitening)
    if kind == HEAD_SR:
        scale, mean_size, lam = r.unpack("IId")
        w = r.matrix()[:, 0]
        return SrModel(net, PixelRegressor(w, lam), scale, mean_size)
    raise FormatError(f"unknown head kind {kind}", at)


def dumps_checkpoint(ckpt: Checkpoint) -> bytes:
    w = _Writer()
    w.parts.append(MAGIC)
    w.pack("III", ckpt.version, len(ckpt.net.layers), ckpt.net.input_channels)
    for layer in ckpt.net.layers:
        w.pack("IIIdd", layer.patch_size, layer.patch_dim, layer.filters_out, layer.alpha, layer.epsilon)
        pool = layer.pool
        w.pack("B", pool is not None)
        if pool is not None:
            w.pack("dddB", pool.subsampling, pool.beta, pool.radius, pool.normalize)
        w.parts.append(np.asarray(layer.Z, dtype="<f8").tobytes(order="F"))
    _write_head(w, ckpt.head)
    hist = json.dumps(ckpt.history).encode()
    w.pack("I", len(hist))
    w.parts.append(hist)
    w.pack("Q", int(ckpt.seed) & 0xFFFFFFFFFFFFFFFF)
    return w.bytes()


def loads_checkpoint(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise FormatError("bad magic, not a checkpoint file", 0)
    version = r.one("I")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, this reader supports {VERSION}", 4)
    n_layers, in_channels = r.unpack("II")
    layers = []
    for _ in range(n_layers):
        at = r.pos
        patch, dim, filters, alpha, eps = r.unpack("IIIdd")
        pool = None
        if r.one("B"):
            s, beta, radius, normalize = r.unpack("dddB")
            pool = PoolSpec(s, beta, radius, bool(normalize))
        Z = r.array((dim, filters))
        try:
            layers.append(LayerParams(Z, alpha, patch, pool, eps))
        except ValueError as err:
            raise FormatError(f"invalid layer: {err}", at) from err
    try:
        net = NetworkParams(layers, in_channels)
    except ValueError as err:
        raise FormatError(f"inconsistent layers: {err}", 16) from err
    head = _read_head(r, net)
    at = r.pos
    try:
        history = json.loads(r.take(r.one("I")).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise FormatError("corrupt history block", at) from err
    seed = r.one("Q")
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes", r.pos)
    return Checkpoint(net, head, history, seed, version)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(dumps_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return loads_checkpoint(Path(path).read_bytes())
