"""Seed derivation.

Every stochastic operation takes an explicit 64-bit seed or a
:class:`numpy.random.Generator`. Sub-seeds are derived from a master seed and
a sequence of purpose tags with BLAKE2b, so a sample, a tile or a Monte-Carlo
pass can be regenerated in isolation without replaying any other draw.
"""

from __future__ import annotations

import hashlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def derive_seed(seed: int, *tags: object) -> int:
    """Return a 64-bit seed for ``hash(seed, tag0, tag1, ...)``."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed) & SEED_MASK).encode())
    for tag in tags:
        h.update(b"\x1f")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest(), "little")


def make_rng(seed: int, *tags: object) -> np.random.Generator:
    """Philox (counter-based) generator keyed by ``derive_seed(seed, *tags)``."""
    key = derive_seed(seed, *tags) if tags else int(seed) & SEED_MASK
    return np.random.Generator(np.random.Philox(key))
