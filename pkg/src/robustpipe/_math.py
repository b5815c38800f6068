"""Small numerical helpers shared by the loss and aggregation code."""

import zlib

import numpy as np

PROB_FLOOR = 1e-12
LOG_FLOOR = float(np.log(PROB_FLOOR))


def log_softmax(z):
    z = np.asarray(z, dtype=float)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def derive_rng(seed, *names):
    """Independent generator for a named stream, e.g. ``derive_rng(7, "trial", 3, "shuffle")``.

    Names are hashed with crc32 so the mapping is stable across processes
    and Python versions (``hash()`` is salted).
    """
    words = [int(seed) & 0xFFFFFFFF]
    for name in names:
        words.append(zlib.crc32(str(name).encode("utf-8")))
    return np.random.default_rng(np.random.SeedSequence(words))


def derive_seed(seed, *names):
    return int(derive_rng(seed, *names).integers(0, 2**31 - 1))
