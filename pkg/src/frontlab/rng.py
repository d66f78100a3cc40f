"""Reproducible random streams keyed by ``(seed, stream ids...)``.

Numpy-side sampling uses the counter-based Philox bit generator. Compiled
kernels cannot hold a ``Generator``; they receive integer seeds derived from
the same key tree instead.
"""
import numpy as np


def _sequence(seed, key):
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))


def stream(seed, *key):
    """Independent ``numpy.random.Generator`` for the given key path."""
    return np.random.Generator(np.random.Philox(_sequence(seed, key)))


def derive_seed(seed, *key):
    """A 31-bit integer seed for compiled kernels, derived from the key path."""
    return int(_sequence(seed, key).generate_state(1, dtype=np.uint32)[0] >> 1)
