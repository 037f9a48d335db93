"""Calibration, network quantization and the integer forward pass.

The quantized pass runs channels-last (B, H, W, C). uint8 activation codes are
shifted to int8 (``q - 128``) for the GEMM; the shift is undone with a per
channel correction ``(128 - zp) * sum(w)`` folded into the int32 accumulator
together with the quantized bias. Padding uses the input zero point, which
dequantizes to exactly 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from amqc.cnn import layers as L
from amqc.datagen.transforms import round_half_away
from amqc.errors import DependencyError, InvalidArgument, ShapeError, StateError
from amqc.quant.scheme import QuantParams, params_from_range, quantize, quantize_weights

MIN_CALIBRATION = 16
INT32_MAX = np.iinfo(np.int32).max


# -- integer GEMM backends ----------------------------------------------------

def _gemm_numpy(a, b):
    # float64 holds every partial sum exactly (|acc| < 2**53 for any layer here)
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.int64)


def _gemm_torch(a, b):
    import torch

    return torch._int_mm(torch.from_numpy(a), torch.from_numpy(b)).numpy()


def _torch_available():
    try:
        import torch
    except ImportError:
        return False
    return hasattr(torch, "_int_mm")


BACKENDS = {"numpy": _gemm_numpy, "torch": _gemm_torch}


def default_backend():
    return "torch" if _torch_available() else "numpy"


def _gemm(name):
    if name is None:
        name = default_backend()
    if name not in BACKENDS:
        raise InvalidArgument(f"unknown GEMM backend {name!r}; choose from {sorted(BACKENDS)}")
    if name == "torch" and not _torch_available():
        raise DependencyError("the torch GEMM backend needs torch>=2.2 (pip install artifact[fast])")
    return BACKENDS[name]


# -- calibration --------------------------------------------------------------

def calibrate(net, samples, batch_size=32):
    """Activation params for the input and every layer output.

    Returns a list of ``len(net.specs) + 1`` QuantParams: entry 0 covers the
    network input, entry ``i + 1`` the output of layer ``i``.
    """
    samples = np.asarray(samples)
    if samples.ndim != 4 or len(samples) == 0:
        raise InvalidArgument("calibration set is empty")
    if len(samples) < MIN_CALIBRATION:
        raise InvalidArgument(f"calibration needs at least {MIN_CALIBRATION} samples, "
                              f"got {len(samples)}")
    n = len(net.specs) + 1
    lo, hi = np.full(n, np.inf), np.full(n, -np.inf)
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        outs = [net._check_batch(chunk)] + net.layer_outputs(chunk)
        for i, a in enumerate(outs):
            lo[i] = min(lo[i], float(a.min()))
            hi[i] = max(hi[i], float(a.max()))
    return [params_from_range(a, b) for a, b in zip(lo, hi)]


# -- quantized network --------------------------------------------------------

@dataclass(frozen=True)
class QuantizedLayer:
    weights: np.ndarray  # int8, same layout as the float weights
    scales: np.ndarray  # float64 per output channel
    bias: np.ndarray  # float64; folded into the accumulator once act params are known


def _frozen(a):
    a = np.array(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class _Step:
    kind: str
    layer: int
    out_index: int = 0  # act_params index of this step's output
    relu: bool = False
    final: bool = False  # produce real values rather than uint8 codes
    mat: np.ndarray = None  # (K, F) int8, channels-last im2col order
    correction: np.ndarray = None  # int64 (F,): bias + zero-point shift
    multiplier: np.ndarray = None  # float64 (F,): accumulator -> output scale
    in_qp: QuantParams = None  # params of the codes this step consumes


class QuantizedNetwork:
    """int8 weights plus activation params. Immutable after construction."""

    def __init__(self, specs, layers, input_shape, act_params=None):
        self.specs = list(specs)
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        if len(self.layers) != len(self.specs):
            raise ShapeError(f"{len(self.layers)} layer slots for {len(self.specs)} specs")
        for i, (s, ql) in enumerate(zip(self.specs, self.layers)):
            if s.has_params and ql is None:
                raise ShapeError(f"layer {i} ({s.kind}) has no quantized weights")
            if ql is not None and np.abs(ql.weights.astype(np.int16)).max(initial=0) > 127:
                raise InvalidArgument(f"layer {i}: quantized weight outside [-127, 127]")
        if act_params is not None:
            act_params = tuple(act_params)
            if len(act_params) != len(self.specs) + 1:
                raise InvalidArgument(f"expected {len(self.specs) + 1} activation params, "
                                      f"got {len(act_params)}")
        self.act_params = act_params
        self._plan = self._build_plan() if act_params is not None else None

    @property
    def num_classes(self):
        return self.layers[self._last_param_layer()].weights.shape[0]

    def _last_param_layer(self):
        return max(i for i, s in enumerate(self.specs) if s.has_params)

    def _build_plan(self):
        ap = self.act_params
        last = self._last_param_layer()
        plan = []
        # codes keep the params of the last requantization; pooling and
        # flattening pass them through even when their calibrated range differs
        in_qp = ap[0]
        i = 0
        while i < len(self.specs):
            spec = self.specs[i]
            if not spec.has_params:
                plan.append(_Step(spec.kind, i, out_index=i + 1))
                i += 1
                continue
            ql = self.layers[i]
            relu = i + 1 < len(self.specs) and self.specs[i + 1].kind == "relu"
            out_index = i + 2 if relu else i + 1
            w = ql.weights
            if spec.kind == "conv":
                # (F, C, k, k) -> (k, k, C, F) to match channels-last patches
                mat = w.transpose(2, 3, 1, 0).reshape(-1, w.shape[0])
            else:
                mat = w.T
            acc_scale = in_qp.scale * ql.scales
            bias_q = np.clip(round_half_away(ql.bias / acc_scale), -INT32_MAX, INT32_MAX)
            rowsum = w.reshape(w.shape[0], -1).astype(np.int64).sum(axis=1)
            correction = bias_q.astype(np.int64) + (128 - in_qp.zero_point) * rowsum
            final = i == last
            mult = acc_scale if final else acc_scale / ap[out_index].scale
            plan.append(_Step(spec.kind, i, out_index, relu, final,
                              np.ascontiguousarray(mat, dtype=np.int8),
                              _frozen(correction), _frozen(mult), in_qp))
            in_qp = ap[out_index]
            i += 2 if relu else 1
        return tuple(plan)

    def specs_equal(self, net):
        return self.specs == list(net.specs) and self.input_shape == tuple(net.input_shape)


def quantize_network(net, act_params=None):
    """Per-channel int8 weights; ``act_params`` comes from :func:`calibrate`.

    Without activation params the result can be stored but not run.
    """
    layers = []
    for spec, p in zip(net.specs, net.params):
        if p is None:
            layers.append(None)
            continue
        q, scales = quantize_weights(p[0])
        layers.append(QuantizedLayer(_frozen(q), _frozen(scales),
                                     _frozen(np.asarray(p[1], dtype=np.float64))))
    return QuantizedNetwork(net.specs, layers, net.input_shape, act_params)


# -- integer forward ----------------------------------------------------------

# Conv layers run over groups of samples holding about this many output pixels.
# Large early feature maps stay cache-resident; small late ones share one GEMM so
# their weight matrices are streamed once per group instead of once per frame.
ROW_BUDGET = 640


def _patches(x, k, pad):
    """Channels-last int8 im2col: (B, H, W, C) -> (B*H*W, k*k*C)."""
    b, h, w, c = x.shape
    p = k // 2
    xp = np.full((b, h + 2 * p, w + 2 * p, c), pad, dtype=x.dtype)
    xp[:, p:p + h, p:p + w] = x
    cols = np.empty((b, h, w, k, k, c), dtype=x.dtype)
    for dy in range(k):
        for dx in range(k):
            cols[:, :, :, dy, dx] = xp[:, dy:dy + h, dx:dx + w]
    return cols.reshape(b * h * w, k * k * c)


def _shift(q):
    # uint8 code -> int8 (q - 128) without widening
    return (q ^ np.uint8(0x80)).view(np.int8)


def _requantize(acc, step, out_qp):
    """int32 accumulator -> uint8 codes for the next layer."""
    v = acc.astype(np.float64)
    v += step.correction
    v *= step.multiplier
    if step.relu:
        # values that ReLU keeps are non-negative, where half-away rounding is floor(v + 0.5)
        v += out_qp.zero_point + 0.5
        np.floor(v, out=v)
        lo = out_qp.zero_point
    else:
        v = round_half_away(v) + out_qp.zero_point
        lo = 0
    np.clip(v, lo, 255, out=v)
    return v.astype(np.uint8)


def _pool_codes(x):
    h2, w2 = x.shape[1] // 2, x.shape[2] // 2
    a = np.maximum(x[:, 0:2 * h2:2, 0:2 * w2:2], x[:, 0:2 * h2:2, 1:2 * w2:2])
    return np.maximum(a, np.maximum(x[:, 1:2 * h2:2, 0:2 * w2:2], x[:, 1:2 * h2:2, 1:2 * w2:2]))


def _conv_codes(x, step, k, pad, out_qp, gemm):
    """Requantized conv output codes, computed in row-budgeted sample groups."""
    b, h, w, _ = x.shape
    g = max(1, ROW_BUDGET // (h * w))
    out = np.empty((b, h, w, step.mat.shape[1]), dtype=np.uint8)
    xs = _shift(x)
    for i in range(0, b, g):
        acc = gemm(_patches(xs[i:i + g], k, pad), step.mat)
        out[i:i + g] = _requantize(acc, step, out_qp).reshape(-1, h, w, out.shape[3])
    return out


def qforward(qnet, batch, backend=None):
    """Class probabilities ``(B, num_classes)`` from the integer path."""
    if qnet._plan is None:
        raise StateError("quantized network has no activation params; run calibrate first")
    gemm = _gemm(backend)
    batch = np.asarray(batch)
    if batch.ndim != 4 or batch.shape[1:] != qnet.input_shape:
        raise ShapeError(f"layer 0 ({qnet.specs[0].kind}): batch shape {batch.shape} does not "
                         f"match network input (B, {', '.join(map(str, qnet.input_shape))})")
    ap = qnet.act_params
    x = quantize(batch, ap[0]).transpose(0, 2, 3, 1)  # codes, channels-last
    qp = ap[0]
    real = False
    for step in qnet._plan:
        if step.kind in ("conv", "dense"):
            if step.kind == "conv" and not step.final:
                pad = np.int8(qp.zero_point - 128)
                qp = ap[step.out_index]
                x = _conv_codes(x, step, qnet.specs[step.layer].kernel, pad, qp, gemm)
                continue
            if step.kind == "conv":
                b, h, w, _ = x.shape
                k = qnet.specs[step.layer].kernel
                a = _patches(_shift(x), k, np.int8(qp.zero_point - 128))
            else:
                a = np.ascontiguousarray(_shift(x))
            acc = gemm(a, step.mat)
            if step.final:
                x = (acc + step.correction) * step.multiplier
                if step.relu:
                    x = np.maximum(x, 0.0)
                real = True
            else:
                qp = ap[step.out_index]
                x = _requantize(acc, step, qp)
            if step.kind == "conv":
                x = x.reshape(b, h, w, -1)
        elif step.kind == "relu":
            x = np.maximum(x, 0.0) if real else np.maximum(x, np.uint8(qp.zero_point))
        elif step.kind == "maxpool":
            x = _pool_codes(x)
        elif step.kind == "flatten":
            # back to (C, H, W) order so dense weights line up with the float network
            x = x.transpose(0, 3, 1, 2).reshape(x.shape[0], -1)
        elif step.kind == "softmax":
            if not real:
                x = (x.astype(np.float64) - qp.zero_point) * qp.scale
                real = True
            x = L.softmax(x)
    return x
