"""Keyed RNG streams.

Every stochastic operation derives an independent generator from a tuple of
integer keys, so individual draws can be computed in any order (or in
parallel) without changing results.
"""

from __future__ import annotations

import numpy as np

_MOD = 2**63


def seed_sequence(*parts: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(tuple(int(p) % _MOD for p in parts))


def keyed_rng(*parts: int) -> np.random.Generator:
    """Generator for the stream identified by the key tuple."""
    return np.random.default_rng(seed_sequence(*parts))


def derive_seed(*parts: int) -> int:
    """Collapse a key tuple into a single integer seed."""
    return int(seed_sequence(*parts).generate_state(1, np.uint64)[0])
