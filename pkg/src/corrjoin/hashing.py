"""Seedable 64-bit mixers (splitmix64 finalizer) over numpy arrays and ints."""

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

SPLIT_SEED = 0x5EED_0001


def _fmix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def seed_offset(seed: int) -> np.uint64:
    return np.uint64((seed * _GOLDEN) & MASK64)


def mix64(x, seed: int = 0) -> np.ndarray:
    """Hash uint64 values; distinct seeds give independent-looking functions."""
    arr = np.asarray(x, dtype=np.uint64)
    return _fmix(arr + seed_offset(seed + 1))


def mix64_int(x: int, seed: int = 0) -> int:
    return int(mix64(np.array([x & MASK64], dtype=np.uint64), seed)[0])


def split_hash(keys, level: int = 0) -> np.ndarray:
    return mix64(keys, SPLIT_SEED + 7919 * level)
