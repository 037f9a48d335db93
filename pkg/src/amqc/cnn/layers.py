"""Layer kernels.

Public functions take per-sample shapes (``(C, H, W)`` images, ``(N,)``
vectors) or a leading batch axis. The ``*_b`` kernels work on batches
``(B, C, H, W)`` and are what :class:`Network` uses. A convolution is one
GEMM per sample of the filter matrix against that sample's im2col buffer, so
a sample's result never depends on its neighbours in the batch (BLAS may
round differently at different column offsets of a single large GEMM).
"""

from __future__ import annotations

import numpy as np

from amqc.errors import InvalidArgument, NumericError, ShapeError

PROB_FLOOR = 1e-12


# -- batched kernels ----------------------------------------------------------

def im2col_b(x, k, pad_value=0):
    """``(B, C, H, W)`` -> ``(B, C*k*k, H*W)`` for a stride-1 same-padded k x k window."""
    b, c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=pad_value)
    cols = np.empty((b, c, k, k, h, w), dtype=x.dtype)
    for dy in range(k):
        for dx in range(k):
            cols[:, :, dy, dx] = xp[:, :, dy:dy + h, dx:dx + w]
    return cols.reshape(b, c * k * k, h * w)


def col2im_b(dcols, x_shape, k):
    b, c, h, w = x_shape
    p = k // 2
    dcols = dcols.reshape(b, c, k, k, h, w)
    dxp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=dcols.dtype)
    for dy in range(k):
        for dx in range(k):
            dxp[:, :, dy:dy + h, dx:dx + w] += dcols[:, :, dy, dx]
    return dxp[:, :, p:p + h, p:p + w]


def conv_forward_b(x, w, b):
    f, c, k, k2 = w.shape
    if x.ndim != 4 or x.shape[1] != c or k != k2 or k % 2 == 0 or b.shape != (f,):
        raise ShapeError(f"conv2d: input {tuple(x.shape)} incompatible "
                         f"with weights {tuple(w.shape)} and bias {tuple(b.shape)}")
    n, _, h, wd = x.shape
    cols = im2col_b(x, k)
    out = np.matmul(w.reshape(f, -1), cols)
    out += b[:, None]
    return out.reshape(n, f, h, wd), cols


def conv_backward_b(dout, cols, w, x_shape, need_dx=True):
    f, _, k, _ = w.shape
    d3 = dout.reshape(dout.shape[0], f, -1)
    dw = np.tensordot(d3, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
    db = d3.sum(axis=(0, 2))
    dx = col2im_b(np.matmul(w.reshape(f, -1).T, d3), x_shape, k) if need_dx else None
    return dx, dw, db


def _pool_views(x, h2, w2):
    return [x[:, :, dy:2 * h2:2, dx:2 * w2:2] for dy in (0, 1) for dx in (0, 1)]


def pool_forward_b(x):
    """2x2/2 max pool; ``arg`` holds the first maximal window slot (row-major)."""
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool2 needs H, W >= 2, got input {tuple(x.shape)}")
    views = _pool_views(x, h // 2, w // 2)
    out = views[0].copy()
    arg = np.zeros(out.shape, dtype=np.int8)
    for slot, v in enumerate(views[1:], 1):
        better = v > out
        np.copyto(out, v, where=better)
        arg[better] = slot
    return out, arg


def pool_backward_b(dout, arg, x_shape):
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for slot, v in enumerate(_pool_views(dx, x_shape[2] // 2, x_shape[3] // 2)):
        np.copyto(v, dout, where=arg == slot)
    return dx


def dense_b(x, w, b):
    """Row-wise ``x @ w.T + b``, one product per row."""
    return np.matmul(x[:, None, :], w.T)[:, 0] + b


# -- public per-sample API ---------------------------------------------------

def _batched(x, name):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"{name}: expected (C,H,W) or (N,C,H,W), got shape {x.shape}")


def conv2d(x, weights, bias):
    """Stride-1, zero same-padded convolution (odd square kernels)."""
    weights, bias = np.asarray(weights), np.asarray(bias)
    xb, single = _batched(x, "conv2d")
    if weights.ndim != 4 or bias.ndim != 1:
        raise ShapeError(f"conv2d: weights {weights.shape} / bias {bias.shape} have wrong rank")
    try:
        out, _ = conv_forward_b(xb, weights, bias)
    except ShapeError:
        raise ShapeError(f"conv2d: input shape {np.shape(x)} incompatible with weights "
                         f"shape {weights.shape} and bias shape {bias.shape}") from None
    return out[0] if single else out


def relu(x):
    return np.maximum(x, 0)


def maxpool2(x):
    """2x2 max pool, stride 2; an odd trailing row/column is dropped."""
    xb, single = _batched(x, "maxpool2")
    out, _ = pool_forward_b(xb)
    return out[0] if single else out


def dense(x, weights, bias):
    x, weights, bias = np.asarray(x), np.asarray(weights), np.asarray(bias)
    if weights.ndim != 2 or x.shape[-1:] != weights.shape[1:] or bias.shape != weights.shape[:1]:
        raise ShapeError(f"dense: input shape {x.shape} incompatible with weights shape "
                         f"{weights.shape} and bias shape {bias.shape}")
    return x @ weights.T + bias


def softmax(z):
    """Max-shifted softmax over the last axis."""
    z = np.asarray(z)
    if not np.isfinite(z).all():
        raise NumericError("softmax input contains non-finite values")
    if z.shape[-1:] == (0,):
        raise InvalidArgument("softmax needs at least one class")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(y, p):
    """-log(p[true]) for a one-hot ``y``; ``p`` is clamped to [1e-12, 1] first."""
    y, p = np.asarray(y), np.asarray(p, dtype=np.float64)
    if y.shape != p.shape or y.ndim != 1:
        raise InvalidArgument(f"y {y.shape} and probabilities {p.shape} must be equal-length vectors")
    if not (np.isin(y, (0, 1)).all() and y.sum() == 1):
        raise InvalidArgument("y must be one-hot")
    q = np.clip(p, PROB_FLOOR, 1.0)
    # -sum y*log(q) reduces to the true-class term for a one-hot y
    return float(-np.log(q[int(np.argmax(y))])) + 0.0


def batch_cross_entropy(labels, probs):
    """Mean clamped cross-entropy over rows; ``labels`` are class indices."""
    q = np.clip(probs[np.arange(len(labels)), labels], PROB_FLOOR, 1.0)
    return float(-np.log(q).mean())
