from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from amqc.datagen import derive_seed, preprocess_batch
from amqc.errors import InvalidArgument, NumericError


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 1
    seed: int = 0
    lr_decay: float = 1.0  # multiply the rate by this every `decay_every` epochs
    decay_every: int = 0  # 0 keeps the rate constant

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InvalidArgument(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise InvalidArgument(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise InvalidArgument(f"epochs must be >= 0, got {self.epochs}")
        if not 0.0 < self.lr_decay <= 1.0 or self.decay_every < 0:
            raise InvalidArgument(f"lr_decay must be in (0, 1] and decay_every >= 0, got "
                                  f"{self.lr_decay}, {self.decay_every}")

    def lr_at(self, epoch):
        if self.decay_every == 0:
            return self.learning_rate
        return self.learning_rate * self.lr_decay ** (epoch // self.decay_every)


def sample_arrays(sample_set, input_shape=None, dtype=np.float32):
    """Preprocessed ``(X, y)`` arrays for a SampleSet."""
    images = [img for img, _ in sample_set.samples]
    if input_shape is None:
        h, w = images[0].shape if images else (1, 1)
    else:
        _, h, w = input_shape
    return preprocess_batch(images, h, w, dtype), sample_set.labels()


def train_epoch(net, X, y, cfg, epoch=0):
    """One pass of mini-batch SGD over a seeded shuffle.

    Returns ``(new_network, mean_loss)`` where the mean is per sample over the
    epoch, each batch's loss being measured before its own update.
    """
    n = len(X)
    if n == 0:
        raise InvalidArgument("training set is empty")
    net = net.copy()
    order = np.random.default_rng(derive_seed(cfg.seed, epoch)).permutation(n)
    lr = net.dtype.type(cfg.lr_at(epoch))
    total = 0.0
    for bi, start in enumerate(range(0, n, cfg.batch_size)):
        idx = order[start:start + cfg.batch_size]
        try:
            with np.errstate(invalid="ignore", over="ignore"):
                loss, grads = net.loss_and_grads(X[idx], y[idx])
        except NumericError as exc:
            raise NumericError(f"batch {bi}: {exc}", batch_index=bi) from None
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss {loss} in batch {bi}", batch_index=bi)
        total += loss * len(idx)
        for p, g in zip(net.params, grads):
            if p is not None:
                for t, gt in zip(p, g):
                    np.subtract(t, lr * gt, out=t)
    return net, total / n


def predict(net, X, batch_size=64):
    out = np.empty((len(X), net.num_classes), dtype=np.float64)
    for start in range(0, len(X), batch_size):
        out[start:start + batch_size] = net.forward(X[start:start + batch_size])
    return out


def evaluate(net, X, y, batch_size=64):
    from amqc.metrics import ConfusionMatrix

    pred = predict(net, X, batch_size).argmax(axis=1)
    return ConfusionMatrix.from_labels(y, pred, k=net.num_classes)


def fit(net, X, y, cfg, on_epoch=None):
    """Run ``cfg.epochs`` epochs; ``on_epoch(epoch, net, loss)`` is called after each."""
    history = []
    for epoch in range(cfg.epochs):
        net, loss = train_epoch(net, X, y, cfg, epoch)
        history.append(loss)
        if on_epoch is not None:
            on_epoch(epoch, net, loss)
    return net, history
