"""Deterministic random-stream splitting.

Every random task gets its own generator derived from (master seed, key...),
so results do not depend on worker count or execution order.
"""

import numpy as np

# task-kind tags used as the second component of stream keys
PROPOSAL = 0
SIMULATE = 1
TRAIN = 2
PREDICT = 3
EVALUATE = 4
OBSERVE = 5
SMC = 6
MCMC = 7


def substream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
