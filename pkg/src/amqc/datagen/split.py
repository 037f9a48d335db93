from __future__ import annotations

from fractions import Fraction

import numpy as np

from amqc import NUM_CLASSES
from amqc.datagen.synth import SampleSet
from amqc.errors import InvalidArgument


def apportion(n, ratio):
    """Largest-remainder apportionment of ``n`` items by integer ``ratio``.

    Ties on the fractional remainder go to the earlier share.
    """
    total = sum(ratio)
    quotas = [Fraction(n * r, total) for r in ratio]
    shares = [int(q) for q in quotas]
    left = n - sum(shares)
    order = sorted(range(len(ratio)), key=lambda i: (-(quotas[i] - shares[i]), i))
    for i in order[:left]:
        shares[i] += 1
    return shares


def split_dataset(sample_set, ratio=(4, 1), seed=0):
    """Stratified train/test split.

    Within each class the sample indices are shuffled with ``seed`` and the
    first ``apportion(n_c, ratio)[0]`` go to train. Both outputs keep the
    input order.
    """
    n_train_r, n_test_r = ratio
    if n_train_r < 0 or n_test_r < 0 or n_train_r + n_test_r <= 0:
        raise InvalidArgument(f"split ratio must be nonnegative and nonzero, got {ratio}")
    labels = sample_set.labels()
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(NUM_CLASSES):
        idx = np.flatnonzero(labels == c)
        if len(idx) == 0:
            if n_test_r > 0:
                raise InvalidArgument(f"class {c} has no samples but a test share was requested")
            continue
        idx = rng.permutation(idx)
        n_train, _ = apportion(len(idx), (n_train_r, n_test_r))
        train_idx.extend(idx[:n_train].tolist())
        test_idx.extend(idx[n_train:].tolist())
    samples = sample_set.samples
    train = SampleSet([samples[i] for i in sorted(train_idx)], seed)
    test = SampleSet([samples[i] for i in sorted(test_idx)], seed)
    return train, test
