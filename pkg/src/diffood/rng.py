"""Named random streams derived from one run seed.

Every source of randomness in a run (data generation, weight init and
batching, evaluation draws) pulls from its own stream so changing one
stage never perturbs another, while the whole run stays reproducible
from a single integer.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Generator for the (seed, name) stream, stable across platforms."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *words]))


def stream_seed(seed: int, name: str) -> int:
    """Derived integer seed for APIs that take one (e.g. sklearn generators)."""
    return int(stream(seed, name).integers(0, 2**31 - 1))
