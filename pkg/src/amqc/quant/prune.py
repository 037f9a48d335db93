from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from amqc.errors import InvalidArgument


def prune_count(fraction, n):
    """``floor(fraction * n)`` with ``fraction`` read as the decimal it prints as,
    so 0.29 of 100 weights is 29 rather than 28."""
    return math.floor(Fraction(repr(float(fraction))) * n)


def prune_magnitude(net, fraction):
    """Zero the ``floor(fraction * N)`` smallest-magnitude weights across all
    conv and dense weight tensors (N = their total size). Ties go to the lower
    flat index in layer order. Biases are never touched."""
    fraction = float(fraction)
    if not 0.0 <= fraction <= 1.0:
        raise InvalidArgument(f"prune fraction must be in [0, 1], got {fraction}")
    out = net.copy()
    tensors = [p[0] for p in out.params if p is not None]
    if not tensors:
        return out
    flat = np.concatenate([t.ravel() for t in tensors])
    k = prune_count(fraction, flat.size)
    if k == 0:
        return out
    victims = np.argsort(np.abs(flat), kind="stable")[:k]
    flat[victims] = 0
    start = 0
    for t in tensors:
        t[...] = flat[start:start + t.size].reshape(t.shape)
        start += t.size
    return out


def sparsity(net):
    """Fraction of conv/dense weights that are exactly zero."""
    sizes = [(int((p[0] == 0).sum()), p[0].size) for p in net.params if p is not None]
    total = sum(n for _, n in sizes)
    return sum(z for z, _ in sizes) / total if total else 0.0
