"""Deterministic RNG derivation keyed by stable integers.

Every stochastic component derives its generator from the command seed plus
a structural key (width, round, video index, ...), so results never depend
on execution order or worker count.
"""

from __future__ import annotations

import numpy as np


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Generator for a (seed, key...) address, independent of call order."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))
