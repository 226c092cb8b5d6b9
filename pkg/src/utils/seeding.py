"""
A module deriving independent RNG streams from one run seed.

Streams are keyed by integers (shape index, trial index, purpose), so the
numbers a sample receives do not depend on the order samples are processed in.
"""

from __future__ import annotations

import zlib

import numpy as np


def purpose_key(name: str) -> int:
    """Stable integer key of a stream name."""
    return zlib.crc32(name.encode("utf-8"))


def derive_seed(seed: int, *keys: int | str) -> int:
    """
    Child seed of `seed` for the given key path.

    Args:
        seed (int): Run seed (>= 0).
        keys (int | str): Path of integer or named keys.

    Returns:
        int: A 63-bit seed.
    """
    path = tuple(purpose_key(k) if isinstance(k, str) else int(k) for k in keys)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=path)
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def rng_for(seed: int, *keys: int | str) -> np.random.Generator:
    """Generator of the stream at `keys` below `seed`."""
    path = tuple(purpose_key(k) if isinstance(k, str) else int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=path))
