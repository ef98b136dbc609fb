"""Deterministic random-stream derivation.

Every stochastic choice in the package draws from a generator derived from
one root seed plus a structural key (stream name, epoch, patient index, ...).
Keys are hashed with sha256 so the derivation is stable across processes and
interpreter versions; Python's builtin hash() is salted per process and must
never be used here.
"""

from __future__ import annotations

import hashlib

import numpy as np

# canonical stream names used across the package
DATA = "data"
MASK = "mask"
INIT = "init"
SHUFFLE = "shuffle"
AUG = "augment"


def _key_to_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "little")
    raise TypeError(f"rng key parts must be int or str, got {type(part).__name__}")


def substream(root_seed: int, *key) -> np.random.Generator:
    """Generator for the substream identified by (root_seed, *key).

    The same key always yields the same stream; distinct keys yield
    statistically independent streams.
    """
    entropy = [int(root_seed) & 0xFFFFFFFF] + [_key_to_int(part) for part in key]
    return np.random.default_rng(np.random.SeedSequence(entropy))
