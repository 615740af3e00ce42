"""Reproducible random streams.

Every consumer gets its own ``numpy.random.Generator`` derived from a master
seed plus an integer key path, e.g. ``stream(seed, n, replicate)``.  PCG64 and
SeedSequence are platform independent, so streams reproduce everywhere.
"""
import numpy as np


def stream(seed, *key):
    """Independent generator for ``(seed, *key)``."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def stream_label(seed, *key):
    return ":".join(str(int(v)) for v in (seed, *key))
