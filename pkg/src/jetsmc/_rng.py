"""Deterministic, splittable random streams.

Every random draw in the package comes from a ``numpy.random.Generator``
built from ``SeedSequence(entropy=seed, spawn_key=key)``.  The key names the
consumer (a node path, a rank, a jet index, ...), so a draw depends only on
``(seed, key)`` and never on the order in which streams are created.
"""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

Seed = Union[int, Sequence[int]]


def stream(seed: Seed, *key: int) -> np.random.Generator:
    entropy = seed if isinstance(seed, (int, np.integer)) else [int(s) for s in seed]
    return np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=tuple(int(k) for k in key)))


def child_seed(seed: Seed, *key: int) -> list[int]:
    """Entropy list for a derived seed; feeds back into :func:`stream`."""
    base = [int(seed)] if isinstance(seed, (int, np.integer)) else [int(s) for s in seed]
    return base + [int(k) for k in key]


def int_seed(seed: Seed, *key: int) -> int:
    """A single 63-bit integer seed derived from ``(seed, key)``."""
    entropy = seed if isinstance(seed, (int, np.integer)) else [int(s) for s in seed]
    state = np.random.SeedSequence(entropy, spawn_key=tuple(int(k) for k in key)).generate_state(1, dtype=np.uint64)
    return int(state[0] >> np.uint64(1))
