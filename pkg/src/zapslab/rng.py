"""Named RNG substreams derived from one master seed.

Each name maps to a fixed spawn key, so adding draws to one consumer never
shifts the values another consumer sees.
"""

import numpy as np

STREAMS = {
    "init-noise": 0,
    "measurement-noise": 1,
    "step-noise": 2,
    "mask": 3,
    "projection-noise": 4,
    "ground-truth": 5,
    "kernel": 6,
}


def stream(seed: int, name: str) -> np.random.Generator:
    if name not in STREAMS:
        raise KeyError(f"unknown RNG stream {name!r}")
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name],)))
