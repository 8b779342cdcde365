"""Deterministic RNG stream derivation.

Every randomized routine in the package draws from a stream derived from an
integer seed plus a structured key (start index, replication index, ...), so
results never depend on execution order or worker count.
"""
from __future__ import annotations

import numpy as np


def start_rng(seed: int, start_index: int) -> np.random.Generator:
    """Stream for multistart initialization number `start_index`."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=(int(start_index),))
    )


def child_seed(*parts: int) -> int:
    """Collapse an integer key path into a fresh 64-bit seed."""
    seq = np.random.SeedSequence([int(p) for p in parts])
    return int(seq.generate_state(1, np.uint64)[0])


def child_rng(*parts: int) -> np.random.Generator:
    """Generator seeded from an integer key path."""
    return np.random.default_rng(np.random.SeedSequence([int(p) for p in parts]))
