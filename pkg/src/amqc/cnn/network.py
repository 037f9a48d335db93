from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from amqc import IMAGE_H, IMAGE_W, NUM_CLASSES
from amqc.cnn import layers as L
from amqc.errors import InvalidArgument, ShapeError

KINDS = ("conv", "relu", "maxpool", "flatten", "dense", "softmax")

PRESETS = {
    # first conv width is our choice; the remaining four follow the reference design
    "full": (32, 64, 512, 512, 256),
    "tiny": (8, 16, 16, 16, 16),
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    size: int = 0  # conv: filter count, dense: output width
    kernel: int = 3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv", "dense") and self.size < 1:
            raise InvalidArgument(f"{self.kind} layer needs a positive size")

    @property
    def has_params(self):
        return self.kind in ("conv", "dense")


def conv_stack(filters, num_classes=NUM_CLASSES, pool_after=4):
    """conv->relu(->pool) blocks, pooling after the first ``pool_after`` convs,
    then flatten -> dense -> softmax."""
    specs = []
    for i, f in enumerate(filters):
        specs += [LayerSpec("conv", f), LayerSpec("relu")]
        if i < pool_after:
            specs.append(LayerSpec("maxpool"))
    return specs + [LayerSpec("flatten"), LayerSpec("dense", num_classes), LayerSpec("softmax")]


def trace_shapes(specs, input_shape):
    """Per-layer output shapes; raises ShapeError naming the first bad layer."""
    shape = tuple(input_shape)
    out = []
    for i, s in enumerate(specs):
        if s.kind == "conv":
            if len(shape) != 3:
                raise ShapeError(f"layer {i} (conv) needs a (C,H,W) input, got {shape}")
            shape = (s.size, shape[1], shape[2])
        elif s.kind == "maxpool":
            if len(shape) != 3 or shape[1] < 2 or shape[2] < 2:
                raise ShapeError(f"layer {i} (maxpool) needs H, W >= 2, got {shape}")
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif s.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif s.kind == "dense":
            if len(shape) != 1:
                raise ShapeError(f"layer {i} (dense) needs a flat input, got {shape}")
            shape = (s.size,)
        out.append(shape)
    return out


def param_shapes(specs, input_shape):
    shapes = []
    prev = tuple(input_shape)
    for s, out in zip(specs, trace_shapes(specs, input_shape)):
        if s.kind == "conv":
            shapes.append(((s.size, prev[0], s.kernel, s.kernel), (s.size,)))
        elif s.kind == "dense":
            shapes.append(((s.size, prev[0]), (s.size,)))
        else:
            shapes.append(None)
        prev = out
    return shapes


class Network:
    """Layer specs plus parameters.

    ``params[i]`` is ``(weights, bias)`` for conv/dense layers and ``None``
    otherwise. All parameters share one floating dtype (the precision mode).
    Treat instances as immutable; training works on a copy.
    """

    def __init__(self, specs, params, input_shape=(1, IMAGE_H, IMAGE_W)):
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        if not self.specs or self.specs[-1].kind != "softmax":
            raise InvalidArgument("final layer must be softmax")
        expected = param_shapes(self.specs, self.input_shape)
        if len(params) != len(self.specs):
            raise ShapeError(f"{len(params)} parameter slots for {len(self.specs)} layers")
        for i, (exp, got) in enumerate(zip(expected, params)):
            if exp is None:
                if got is not None:
                    raise ShapeError(f"layer {i} ({self.specs[i].kind}) takes no parameters")
                continue
            if got is None or tuple(got[0].shape) != exp[0] or tuple(got[1].shape) != exp[1]:
                have = None if got is None else (got[0].shape, got[1].shape)
                raise ShapeError(f"layer {i} ({self.specs[i].kind}) expects parameter shapes "
                                 f"{exp}, got {have}")
        self.params = [None if p is None else (np.asarray(p[0]), np.asarray(p[1])) for p in params]
        self.num_classes = trace_shapes(self.specs, self.input_shape)[-1][0]

    @property
    def dtype(self):
        for p in self.params:
            if p is not None:
                return p[0].dtype
        return np.dtype(np.float64)

    def copy(self):
        return Network(self.specs, [None if p is None else (p[0].copy(), p[1].copy())
                                    for p in self.params], self.input_shape)

    def astype(self, dtype):
        return Network(self.specs, [None if p is None else (p[0].astype(dtype), p[1].astype(dtype))
                                    for p in self.params], self.input_shape)

    def param_count(self):
        return sum(p[0].size + p[1].size for p in self.params if p is not None)

    def shapes(self):
        return trace_shapes(self.specs, self.input_shape)

    # -- forward/backward ---------------------------------------------------

    def _check_batch(self, batch):
        batch = np.asarray(batch)
        if batch.ndim != 4 or batch.shape[1:] != self.input_shape:
            raise ShapeError(f"layer 0 ({self.specs[0].kind}): batch shape {batch.shape} does "
                             f"not match network input (B, {', '.join(map(str, self.input_shape))})")
        return batch.astype(self.dtype, copy=False)

    def _run(self, batch, keep_cache):
        x = batch
        caches = []
        for i, (spec, p) in enumerate(zip(self.specs, self.params)):
            cache = None
            if spec.kind == "conv":
                out, cols = L.conv_forward_b(x, *p)
                cache = (cols, x.shape)
            elif spec.kind == "relu":
                out = np.maximum(x, 0)
                cache = x > 0
            elif spec.kind == "maxpool":
                out, arg = L.pool_forward_b(x)
                cache = (arg, x.shape)
            elif spec.kind == "flatten":
                out = x.reshape(x.shape[0], -1)
                cache = x.shape
            elif spec.kind == "dense":
                out = L.dense_b(x, *p)
                cache = x
            else:  # softmax is applied to logits by the caller
                out = x
            caches.append(cache if keep_cache else None)
            x = out
        return x, caches

    def layer_outputs(self, batch):
        """Output of every layer in order (the softmax entry holds probabilities)."""
        x = self._check_batch(batch)
        outs = []
        for spec, p in zip(self.specs, self.params):
            if spec.kind == "conv":
                x = L.conv_forward_b(x, *p)[0]
            elif spec.kind == "relu":
                x = np.maximum(x, 0)
            elif spec.kind == "maxpool":
                x = L.pool_forward_b(x)[0]
            elif spec.kind == "flatten":
                x = x.reshape(x.shape[0], -1)
            elif spec.kind == "dense":
                x = L.dense_b(x, *p)
            else:
                x = L.softmax(x)
            outs.append(x)
        return outs

    def logits(self, batch):
        z, _ = self._run(self._check_batch(batch), keep_cache=False)
        return z

    def forward(self, batch):
        """Class probabilities, shape ``(B, num_classes)``."""
        return L.softmax(self.logits(batch))

    def loss_and_grads(self, batch, labels):
        """Mean clamped cross-entropy and its gradient for every parameter."""
        batch = self._check_batch(batch)
        labels = np.asarray(labels, dtype=np.int64)
        z, caches = self._run(batch, keep_cache=True)
        probs = L.softmax(z)
        loss = L.batch_cross_entropy(labels, probs)
        n = len(labels)
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        d /= n
        grads = [None] * len(self.specs)
        for i in range(len(self.specs) - 1, -1, -1):
            spec, cache = self.specs[i], caches[i]
            if spec.kind == "softmax":
                continue
            if spec.kind == "dense":
                w = self.params[i][0]
                grads[i] = (d.T @ cache, d.sum(axis=0))
                d = d @ w
            elif spec.kind == "flatten":
                d = d.reshape(cache)
            elif spec.kind == "maxpool":
                d = L.pool_backward_b(d, *cache)
            elif spec.kind == "relu":
                d = d * cache
            elif spec.kind == "conv":
                cols, x_shape = cache
                dx, dw, db = L.conv_backward_b(d, cols, self.params[i][0], x_shape,
                                                need_dx=i > 0)
                grads[i] = (dw, db)
                d = dx
        return loss, grads


def init_params(specs, input_shape, seed, dtype=np.float32):
    """He-normal weights (std = sqrt(2 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    params = []
    for shapes in param_shapes(specs, input_shape):
        if shapes is None:
            params.append(None)
            continue
        wshape, bshape = shapes
        fan_in = int(np.prod(wshape[1:]))
        w = rng.standard_normal(wshape) * np.sqrt(2.0 / fan_in)
        params.append((w.astype(dtype), np.zeros(bshape, dtype=dtype)))
    return params


def build_network(preset="tiny", seed=0, input_shape=(1, IMAGE_H, IMAGE_W),
                  num_classes=NUM_CLASSES, dtype=np.float32):
    """Network from a preset name, a filter tuple, or an explicit LayerSpec list."""
    if isinstance(preset, str):
        if preset not in PRESETS:
            raise InvalidArgument(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        specs = conv_stack(PRESETS[preset], num_classes)
    elif preset and isinstance(preset[0], LayerSpec):
        specs = list(preset)
    else:
        specs = conv_stack(tuple(preset), num_classes)
    return Network(specs, init_params(specs, input_shape, seed, dtype), input_shape)


def forward(net, batch):
    return net.forward(batch)
