"""Keyed random streams.

Every random draw in a run comes from a generator keyed by
``(seed, client, round, purpose)``, so results do not depend on the order in
which clients are processed and sweeps over p_U, tau or defenses share
common random numbers.
"""

import numpy as np

PURPOSES = {
    "init": 0,
    "batch": 1,
    "corrupt": 2,
    "subset": 3,
    "estimate": 4,
    "detector": 5,
    "pilot": 6,
}


def stream(seed: int, client: int = 0, round_: int = 0, purpose: str = "init") -> np.random.Generator:
    key = [int(seed) & 0xFFFFFFFF, int(client), int(round_), PURPOSES[purpose]]
    return np.random.default_rng(np.random.SeedSequence(key))
