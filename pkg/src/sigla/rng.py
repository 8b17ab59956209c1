"""Deterministic RNG derivation.

Every stochastic step in the simulator draws from a generator keyed by
(seed, purpose tag, round, vehicle, ...). Streams are therefore
independent of execution order, so results do not change if vehicles are
processed concurrently or in a different order.
"""

import numpy as np

# Purpose tags; fixed integers so derived seeds stay stable across versions.
TAG_DATA = 1
TAG_INIT = 2
TAG_TRAIN = 3
TAG_PERTURB = 4
TAG_UPLINK = 5
TAG_DOWNLINK = 6
TAG_CENTRAL = 7
TAG_VEHICLE = 8


def spawn(*key: int) -> np.random.Generator:
    """Return a Generator seeded from an integer key tuple."""
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def derive_seed(*key: int) -> int:
    """Collapse a key tuple into a single 64-bit seed."""
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1)[0])
