"""
Splittable seeding: every stochastic job derives its generator from the run
seed plus a spawn key, so results do not depend on execution order.
"""
from typing import Sequence

import numpy as np


def derive_seed(seed: int, *key: int) -> int:
    """A 64-bit seed for the job identified by `key` under the run `seed`."""
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int, key: Sequence[int] = ()) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))
