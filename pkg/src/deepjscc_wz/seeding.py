"""Named RNG streams so initialization, training, validation, evaluation and
data generation never share a sequence."""

from __future__ import annotations

import numpy as np

STREAM_INIT = 1
STREAM_TRAIN = 2
STREAM_VAL = 3
STREAM_EVAL = 4
STREAM_DATA = 5


def stream_rng(seed: int, *labels: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed), *map(int, labels))))
