"""Deterministic RNG derivation.

Every stochastic routine in the package takes a seed (or an already built
Generator) and derives child streams through SeedSequence entropy lists, so a
single integer reproduces a whole experiment bit for bit.  Salts keep streams
for different purposes (input sampling, transport chunks, dropout masks, ...)
from colliding when they share a root seed.
"""

from __future__ import annotations

import numpy as np

SeedLike = "int | np.random.SeedSequence | np.random.Generator | None"


def as_rng(seed) -> np.random.Generator:
    """Coerce an int, SeedSequence, Generator or None into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    if seed is None:
        return np.random.default_rng()
    return np.random.default_rng(int(seed))


def child_seed(root: int, *key: int) -> np.random.SeedSequence:
    """SeedSequence for stream ``key`` under ``root``.

    ``child_seed(s, a, b)`` is stable across runs and independent of any
    other key, which is what lets a stored (root, index) pair regenerate a
    single dataset sample without replaying the whole run.
    """
    if root < 0:
        raise ValueError(f"root seed must be non-negative, got {root}")
    return np.random.SeedSequence([int(root), *[int(k) for k in key]])


def child_rng(root: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(child_seed(root, *key))


def as_seedseq(seed) -> np.random.SeedSequence:
    """Coerce an int or SeedSequence into a SeedSequence (ints wrapped in a list)."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence([int(seed)])
