"""Seed derivation for independent, order-free random streams."""

from __future__ import annotations

import numpy as np

# stream tags, kept stable so derived seeds never change between releases
FOLDS = 1
PROPENSITY = 2
OUTCOME = 3
BOOTSTRAP = 4
REPLICATE = 5
DATA = 6


def derive_seed(seed: int, *keys: int) -> int:
    """Map ``(seed, keys...)`` to a 63-bit integer seed.

    The result depends only on its arguments, so a task gets the same stream
    no matter which worker runs it or in what order.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
