"""Single-threaded forward-pass latency harness."""

from __future__ import annotations

import json
import math
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass

import numpy as np

from amqc.errors import InvalidArgument
from amqc.quant.qnet import QuantizedNetwork, qforward

MIN_FRAMES = 100
MIN_WARMUP = 10
JSON_KEYS = ("variant", "batch_size", "mean_ms", "p50_ms", "p95_ms", "fps", "threads")


@dataclass(frozen=True)
class LatencyReport:
    variant: str  # "float" or "quantized"
    batch_size: int
    mean_ms: float  # per frame
    p50_ms: float
    p95_ms: float
    fps: float
    threads: int
    frames: int = 0
    max_ms: float = 0.0

    @property
    def mean_ms_per_frame(self):
        return self.mean_ms

    def to_json(self):
        d = asdict(self)
        return json.dumps({k: d[k] for k in JSON_KEYS}, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        missing = [k for k in JSON_KEYS if k not in d]
        if missing:
            raise InvalidArgument(f"latency record lacks keys {missing}")
        return cls(**{k: d[k] for k in JSON_KEYS})


def report_from_times(variant, batch_size, per_frame_ms, threads=1):
    """Summarise per-iteration per-frame times (ms)."""
    t = np.asarray(per_frame_ms, dtype=np.float64)
    if t.size == 0:
        raise InvalidArgument("no timings to summarise")
    mean = float(t.mean())
    return LatencyReport(variant, int(batch_size), mean, float(np.percentile(t, 50)),
                         float(np.percentile(t, 95)), 1000.0 / mean, int(threads),
                         int(t.size * batch_size), float(t.max()))


def reduction_pct(base, new):
    """Latency reduction of ``new`` relative to ``base`` in percent."""
    b = base.mean_ms if isinstance(base, LatencyReport) else float(base)
    n = new.mean_ms if isinstance(new, LatencyReport) else float(new)
    if b <= 0:
        raise InvalidArgument(f"baseline latency must be positive, got {b}")
    return (b - n) / b * 100.0


@contextmanager
def single_thread():
    """Pin BLAS/OpenMP pools (and torch, when loaded) to one thread."""
    from threadpoolctl import threadpool_limits

    torch_threads = None
    try:
        import torch
    except ImportError:
        torch = None
    if torch is not None:
        torch_threads = torch.get_num_threads()
        torch.set_num_threads(1)
    try:
        with threadpool_limits(limits=1):
            yield 1
    finally:
        if torch is not None:
            torch.set_num_threads(torch_threads)


def bench_latency(model, batch_size=32, frames=MIN_FRAMES, warmup=MIN_WARMUP, batch=None,
                  seed=0, backend=None):
    """Time forward passes only; ``batch`` defaults to seeded uniform inputs.

    ``frames`` is rounded up to whole batches. Each timed iteration yields one
    per-frame sample (elapsed / batch_size).
    """
    if frames < MIN_FRAMES:
        raise InvalidArgument(f"frames must be >= {MIN_FRAMES}, got {frames}")
    if warmup < MIN_WARMUP:
        raise InvalidArgument(f"warmup must be >= {MIN_WARMUP} iterations, got {warmup}")
    if batch_size < 1:
        raise InvalidArgument(f"batch_size must be >= 1, got {batch_size}")
    quantized = isinstance(model, QuantizedNetwork)
    if batch is None:
        rng = np.random.default_rng(seed)
        batch = rng.random((batch_size,) + model.input_shape).astype(np.float32)
    batch = np.asarray(batch)
    if len(batch) != batch_size:
        raise InvalidArgument(f"batch holds {len(batch)} frames, batch_size is {batch_size}")
    if quantized:
        def run():
            return qforward(model, batch, backend)
    else:
        def run():
            return model.forward(batch)
    iters = math.ceil(frames / batch_size)
    times = []
    with single_thread() as threads:
        for _ in range(warmup):
            run()
        for _ in range(iters):
            t0 = time.perf_counter()
            run()
            times.append((time.perf_counter() - t0) * 1000.0 / batch_size)
    return report_from_times("quantized" if quantized else "float", batch_size, times, threads)
