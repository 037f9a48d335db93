"""Affine int8 scheme: asymmetric uint8 activations, symmetric per-channel int8 weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from amqc.datagen.transforms import round_half_away
from amqc.errors import InvalidArgument

QMAX_W = 127


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int = 0

    def __post_init__(self):
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise InvalidArgument(f"scale must be positive and finite, got {self.scale}")
        if not 0 <= self.zero_point <= 255:
            raise InvalidArgument(f"zero_point must be in [0, 255], got {self.zero_point}")


def params_from_range(lo, hi):
    """Min-max parameters. The range is widened to contain 0 so that 0 (and
    therefore zero padding and ReLU's floor) is exactly representable."""
    lo, hi = min(float(lo), 0.0), max(float(hi), 0.0)
    if hi == lo:
        return QuantParams(1.0, 0)
    scale = (hi - lo) / 255.0
    zp = int(np.clip(round_half_away(-lo / scale), 0, 255))
    return QuantParams(scale, zp)


def quantize(x, qp):
    """Real values -> uint8 codes."""
    q = round_half_away(np.asarray(x, dtype=np.float64) / qp.scale) + qp.zero_point
    return np.clip(q, 0, 255).astype(np.uint8)


def dequantize(q, qp):
    return (np.asarray(q, dtype=np.float64) - qp.zero_point) * qp.scale


def quantize_weights(w):
    """Per-output-channel symmetric int8: ``scale = max|w| / 127`` along axis 0.

    An all-zero channel gets scale 1. Returns ``(q int8, scales float64)``.
    """
    w = np.asarray(w, dtype=np.float64)
    flat = w.reshape(w.shape[0], -1)
    peak = np.abs(flat).max(axis=1) if flat.size else np.zeros(w.shape[0])
    scales = peak / QMAX_W
    scales = np.where(scales > 0, scales, 1.0)  # zero (or underflowing) channels
    q = np.clip(round_half_away(flat / scales[:, None]), -QMAX_W, QMAX_W)
    return q.astype(np.int8).reshape(w.shape), scales


def dequantize_weights(q, scales):
    q = np.asarray(q, dtype=np.float64)
    return q * np.asarray(scales).reshape((-1,) + (1,) * (q.ndim - 1))
