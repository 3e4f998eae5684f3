"""Seeded random streams.

All randomness goes through Philox, a counter-based generator whose output
is identical across platforms for a given key.  ``stream`` separates
independent uses of one seed (reference, noise, replicate index, ...).
"""

import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), *map(int, stream)])
    return np.random.Generator(np.random.Philox(ss))
