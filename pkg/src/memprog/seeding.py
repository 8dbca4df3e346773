"""Order-stable seed derivation: stream ``i`` of master seed ``s`` never depends on scheduling."""

import numpy as np


def child_seed(master, *keys):
    return np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(k) for k in keys))


def child_rng(master, *keys):
    return np.random.default_rng(child_seed(master, *keys))
