"""Reproducible random streams.

Two flavours are provided. Sequential streams are ordinary
``numpy.random.Generator`` objects derived from a master seed and a tuple of
labels (stage name, trial index, ...). Keyed streams are stateless: a 64-bit
key is hashed into uniforms, so the draw attached to a given individual of a
genealogical tree does not depend on the order in which individuals are
visited. The branching engine relies on the latter for common random numbers.
"""
from __future__ import annotations

import zlib

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SALT = np.uint64(0xD1B54A32D192ED03)
_TWO53 = 2.0**-53


def _label_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("stream labels must be non-negative")
        return int(label)
    return zlib.crc32(str(label).encode())


def seed_sequence(master_seed: int, *labels) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=tuple(_label_int(x) for x in labels))


def stream(master_seed: int, *labels) -> np.random.Generator:
    """Return a generator for ``(master_seed, *labels)``.

    Distinct label tuples give statistically independent streams; the same
    tuple always reproduces the same stream.
    """
    return np.random.Generator(np.random.Philox(seed_sequence(master_seed, *labels)))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def root_keys(rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` 64-bit keys from a sequential stream."""
    return rng.integers(0, np.iinfo(np.uint64).max, size=n, dtype=np.uint64, endpoint=True)


def mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finaliser, vectorised over uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def child_keys(parent: np.ndarray, index) -> np.ndarray:
    """Key of the ``index``-th child (0-based) of each parent key."""
    idx = np.asarray(index, dtype=np.uint64) + np.uint64(1)
    with np.errstate(over="ignore"):
        return mix64(np.asarray(parent, dtype=np.uint64) + idx * _GOLDEN)


def keyed_uniform(key: np.ndarray, channel: int = 0) -> np.ndarray:
    """Uniform draws on the open interval (0, 1), one per key and channel."""
    with np.errstate(over="ignore"):
        z = mix64(np.asarray(key, dtype=np.uint64) ^ (np.uint64(channel + 1) * _SALT))
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO53


def keyed_normal(key: np.ndarray, channel: int = 0) -> np.ndarray:
    return ndtri(keyed_uniform(key, channel))


def keyed_exponential(key: np.ndarray, channel: int = 0) -> np.ndarray:
    return -np.log(keyed_uniform(key, channel))
