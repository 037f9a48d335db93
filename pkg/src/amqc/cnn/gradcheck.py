"""Central-difference verification of the analytic backward pass."""

from __future__ import annotations

import numpy as np

from amqc.errors import InvalidArgument


def rel_error(a, n):
    return abs(a - n) / max(1e-8, abs(a) + abs(n))


def _coordinates(net, n_coords, rng):
    """Spread ``n_coords`` picks evenly over every parameter tensor."""
    tensors = [(i, j) for i, p in enumerate(net.params) if p is not None for j in (0, 1)]
    per = int(np.ceil(n_coords / max(len(tensors), 1)))
    coords = []
    for i, j in tensors:
        size = net.params[i][j].size
        picks = rng.choice(size, size=min(per, size), replace=False)
        coords += [(i, j, int(k)) for k in np.sort(picks)]
    return coords


def grad_check(net, x, y, n_coords=50, h=1e-5, seed=0, grads=None, per_tensor=False):
    """Max relative error between analytic and central-difference gradients.

    ``x`` is a batch ``(B, C, H, W)`` and ``y`` the integer labels (a one-hot
    matrix is accepted too). ``grads`` overrides the analytic gradients, which
    is how tests plant faults. With ``per_tensor`` the result is a dict keyed
    by ``(layer_index, "weights"|"bias")``.
    """
    if net.dtype != np.float64:
        raise InvalidArgument("gradient checking requires a float64 network")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if y.ndim == 2:
        y = y.argmax(axis=1)
    if grads is None:
        _, grads = net.loss_and_grads(x, y)
    probe = net.copy()
    worst = {}
    for i, j, k in _coordinates(net, n_coords, np.random.default_rng(seed)):
        flat = probe.params[i][j].reshape(-1)
        orig = flat[k]
        flat[k] = orig + h
        plus, _ = probe.loss_and_grads(x, y)
        flat[k] = orig - h
        minus, _ = probe.loss_and_grads(x, y)
        flat[k] = orig
        numeric = (plus - minus) / (2 * h)
        err = rel_error(float(grads[i][j].reshape(-1)[k]), numeric)
        key = (i, "weights" if j == 0 else "bias")
        worst[key] = max(worst.get(key, 0.0), err)
    if per_tensor:
        return worst
    return max(worst.values(), default=0.0)
