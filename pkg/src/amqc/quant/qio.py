"""Binary quantized-weights file.

Layout (little-endian)::

    b"AMQ8"  u32 version=1  u32 layer_count  3 x u32 input shape (C, H, W)
    u32 act_count (0 = uncalibrated), then act_count x (f64 scale, u8 zero_point)
    per layer:  u8 kind tag (same tags as the float weights file)
                conv/dense only:
                    u32 ndim, ndim x u32 dims, prod(dims) x int8 weights
                    F x f64 channel scales, F x f64 bias   (F = dims[0])
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from amqc.cnn.network import LayerSpec, param_shapes
from amqc.cnn.weights_io import KIND_TAGS, TAG_KINDS, _Reader
from amqc.errors import FormatError, InvalidArgument, ShapeError
from amqc.quant.qnet import QuantizedLayer, QuantizedNetwork, _frozen
from amqc.quant.scheme import QuantParams

MAGIC = b"AMQ8"
VERSION = 1


def encode_qnet(qnet):
    out = bytearray(MAGIC)
    out += struct.pack("<II3I", VERSION, len(qnet.specs), *qnet.input_shape)
    acts = qnet.act_params or ()
    out += struct.pack("<I", len(acts))
    for qp in acts:
        out += struct.pack("<dB", qp.scale, qp.zero_point)
    for spec, ql in zip(qnet.specs, qnet.layers):
        out += struct.pack("<B", KIND_TAGS[spec.kind])
        if ql is None:
            continue
        w = ql.weights
        out += struct.pack(f"<I{w.ndim}I", w.ndim, *w.shape)
        out += np.ascontiguousarray(w, dtype=np.int8).tobytes()
        out += np.ascontiguousarray(ql.scales, dtype="<f8").tobytes()
        out += np.ascontiguousarray(ql.bias, dtype="<f8").tobytes()
    return bytes(out)


def decode_qnet(data):
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    count = r.u32("layer count")
    input_shape = struct.unpack("<3I", r.take(12, "input shape"))
    act_pos = r.pos
    n_act = r.u32("activation param count")
    acts = []
    for i in range(n_act):
        pos = r.pos
        scale, zp = struct.unpack("<dB", r.take(9, f"activation param {i}"))
        try:
            acts.append(QuantParams(scale, zp))
        except InvalidArgument as exc:
            raise FormatError(f"activation param {i}: {exc}", offset=pos) from None
    specs, layers = [], []
    for li in range(count):
        tag_pos = r.pos
        tag = r.take(1, f"layer {li} kind tag")[0]
        if tag not in TAG_KINDS:
            raise FormatError(f"layer {li}: unknown kind tag {tag}", offset=tag_pos)
        kind = TAG_KINDS[tag]
        if kind not in ("conv", "dense"):
            specs.append(LayerSpec(kind))
            layers.append(None)
            continue
        want = 4 if kind == "conv" else 2
        dim_pos = r.pos
        ndim = r.u32(f"layer {li} weights rank")
        if ndim != want:
            raise FormatError(f"layer {li} ({kind}) weights: rank {ndim}, expected {want}",
                              offset=dim_pos)
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"layer {li} weights dims"))
        if kind == "conv" and dims[2] != dims[3]:
            raise FormatError(f"layer {li}: non-square kernel {dims}", offset=dim_pos)
        w = np.frombuffer(r.take(int(np.prod(dims)), f"layer {li} weights payload"),
                          dtype=np.int8).reshape(dims)
        f = dims[0]
        scales = np.frombuffer(r.take(8 * f, f"layer {li} scales"), dtype="<f8")
        if not (np.isfinite(scales).all() and (scales > 0).all()):
            raise FormatError(f"layer {li}: channel scales must be positive", offset=r.pos - 8 * f)
        bias = np.frombuffer(r.take(8 * f, f"layer {li} bias"), dtype="<f8")
        specs.append(LayerSpec(kind, int(f), int(dims[2]) if kind == "conv" else 3))
        layers.append(QuantizedLayer(_frozen(w), _frozen(scales.astype(np.float64)),
                                     _frozen(bias.astype(np.float64))))
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last layer", offset=r.pos)
    if n_act and n_act != count + 1:
        raise FormatError(f"{n_act} activation params for {count} layers", offset=act_pos)
    try:
        expected = param_shapes(specs, input_shape)
        for i, (exp, ql) in enumerate(zip(expected, layers)):
            if exp is not None and (tuple(ql.weights.shape) != exp[0]):
                raise ShapeError(f"layer {i} expects weights {exp[0]}, got {ql.weights.shape}")
        return QuantizedNetwork(specs, layers, input_shape, acts or None)
    except (ShapeError, ValueError) as exc:
        raise FormatError(f"dimension mismatch: {exc}") from None


def save_qnet(qnet, path):
    Path(path).write_bytes(encode_qnet(qnet))


def load_qnet(path):
    return decode_qnet(Path(path).read_bytes())
