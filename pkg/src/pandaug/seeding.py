"""Deterministic per-purpose RNG derivation.

A single run seed fans out to independent generators via a stable hash of
string tags, so each module draws from its own stream and stays reproducible
regardless of call order elsewhere.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_key(*tags: str) -> tuple[int, ...]:
    return tuple(zlib.crc32(t.encode("utf-8")) for t in tags)


def rng_for(seed: int, *tags: str) -> np.random.Generator:
    """Generator seeded from (seed, tags); same inputs give the same stream."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=derive_key(*tags))
    return np.random.Generator(np.random.PCG64(ss))
