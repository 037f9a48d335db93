"""Binary weights file.

Layout (all integers little-endian)::

    b"AMQC"  u32 version=1  u32 layer_count
    per layer:  u8 kind tag
                conv/dense only, weights then bias:
                    u32 ndim, ndim x u32 dims, prod(dims) x float32

Kind tags: conv=1 relu=2 maxpool=3 flatten=4 dense=5 softmax=6. Parameters
are stored as float32, so a float32 network round-trips bit-exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from amqc import IMAGE_H, IMAGE_W
from amqc.cnn.network import LayerSpec, Network
from amqc.errors import FormatError, ShapeError

MAGIC = b"AMQC"
VERSION = 1
KIND_TAGS = {"conv": 1, "relu": 2, "maxpool": 3, "flatten": 4, "dense": 5, "softmax": 6}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}


def encode_network(net):
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(net.specs))
    for spec, p in zip(net.specs, net.params):
        out += struct.pack("<B", KIND_TAGS[spec.kind])
        if p is None:
            continue
        for t in p:
            out += struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape)
            out += np.ascontiguousarray(t, dtype="<f4").tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated {what}: need {n} bytes, {len(self.data) - self.pos} left",
                              offset=self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def decode_network(data, input_shape=(1, IMAGE_H, IMAGE_W)):
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    count = r.u32("layer count")
    specs, params = [], []
    for li in range(count):
        tag_pos = r.pos
        tag = r.take(1, f"layer {li} kind tag")[0]
        if tag not in TAG_KINDS:
            raise FormatError(f"layer {li}: unknown kind tag {tag}", offset=tag_pos)
        kind = TAG_KINDS[tag]
        if kind not in ("conv", "dense"):
            specs.append(LayerSpec(kind))
            params.append(None)
            continue
        tensors = []
        for name, want_ndim in (("weights", 4 if kind == "conv" else 2), ("bias", 1)):
            dim_pos = r.pos
            ndim = r.u32(f"layer {li} {name} rank")
            if ndim != want_ndim:
                raise FormatError(f"layer {li} ({kind}) {name}: rank {ndim}, expected {want_ndim}",
                                  offset=dim_pos)
            dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"layer {li} {name} dims"))
            n = int(np.prod(dims))
            raw = r.take(4 * n, f"layer {li} {name} payload")
            tensors.append(np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims))
        w, b = tensors
        if kind == "conv" and w.shape[2] != w.shape[3]:
            raise FormatError(f"layer {li}: non-square kernel {w.shape}")
        specs.append(LayerSpec(kind, int(w.shape[0]), int(w.shape[2]) if kind == "conv" else 3))
        params.append((w, b))
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last layer", offset=r.pos)
    try:
        return Network(specs, params, input_shape)
    except (ShapeError, ValueError) as exc:
        raise FormatError(f"dimension mismatch: {exc}") from None


def save_weights(net, path):
    Path(path).write_bytes(encode_network(net))


def load_weights(path, input_shape=(1, IMAGE_H, IMAGE_W)):
    return decode_network(Path(path).read_bytes(), input_shape)
