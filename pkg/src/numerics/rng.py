"""
Seeded Random Streams
Counter-based (Philox) generators keyed by (seed, stream name)
"""

import zlib

import numpy as np


def stream_id(name: str) -> int:
    """Stable 32-bit identifier for a stream name"""
    return zlib.crc32(name.encode("utf-8"))


def make_rng(seed: int, name: str) -> np.random.Generator:
    """
    Build an independent generator for one named stream

    Draw k of stream `name` depends only on (seed, name, k), so creating
    or consuming other streams never shifts it.

    Args:
        seed: 64-bit experiment seed
        name: Stream name (parameter path, 'shuffle', 'sample.00003', ...)

    Returns:
        np.random.Generator: Philox-backed generator
    """
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream_id(name)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
