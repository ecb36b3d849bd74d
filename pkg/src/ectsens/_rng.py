"""Deterministic keyed RNG streams.

Every stochastic routine takes a seed plus a structural key (replicate index,
restart index, model slot, ...) and derives an independent PCG64 stream via
SeedSequence spawn keys, so results are reproducible and order-independent
regardless of execution order or parallelism.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key_part(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"rng key parts must be non-negative, got {part}")
        return int(part)
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"rng key parts must be int or str, got {type(part)}")


def seed_sequence(seed, *key) -> np.random.SeedSequence:
    parts = tuple(_key_part(k) for k in key)
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(
            entropy=seed.entropy, spawn_key=tuple(seed.spawn_key) + parts)
    return np.random.SeedSequence(entropy=int(seed), spawn_key=parts)


def rng_for(seed, *key) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *key)))
