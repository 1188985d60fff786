"""Seed derivation and config hashing.

A master seed (unsigned 64-bit) and a (n, replica) pair name a stream:
``SeedSequence(entropy=seed, spawn_key=(n, replica))``. numpy's
SeedSequence hashes the spawn key into the pool, so distinct keys give
statistically independent PCG64 streams and the mapping never depends
on how many runs were launched or in which order.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np

U64_MAX = 2**64 - 1


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= U64_MAX:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream_seed(seed: int, n: int, replica: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=check_seed(seed), spawn_key=(int(n), int(replica)))


def canonical_json(obj) -> str:
    """Key-sorted compact JSON with floats written by repr (round-trip exact)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]
