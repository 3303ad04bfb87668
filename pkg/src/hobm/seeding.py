"""Seed derivation and random generators.

Every stochastic component draws from its own Philox (counter-based) stream
whose 64-bit key is derived by :func:`replicate_seed`::

    seed = little-endian uint64 of BLAKE2b-64( f"{base_seed}\\x1f{role}\\x1f{index}" )

The derivation is a pure function of its inputs, so results never depend on
worker count or scheduling order.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def replicate_seed(base_seed: int, role: str, index: int) -> int:
    key = f"{int(base_seed) & MASK64}\x1f{role}\x1f{int(index)}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & MASK64))
