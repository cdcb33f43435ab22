"""Seed derivation for reproducible, order-independent Monte Carlo streams.

Every random stream in the package comes from a Philox (counter-based)
generator keyed by a master seed plus a tuple of integer keys, so replicate
``i`` of experiment ``e`` always sees the same numbers no matter how the work
is split between workers.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _entropy(seed: int) -> int:
    seed = int(seed)
    if seed < 0:
        seed &= _MASK64
    return seed


def derive_seed(master: int, *keys: int) -> int:
    """Return a 64-bit seed derived from ``master`` and integer ``keys``."""
    ss = np.random.SeedSequence(_entropy(master), spawn_key=tuple(int(k) for k in keys))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Philox generator for ``(seed, *keys)``."""
    ss = np.random.SeedSequence(_entropy(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
