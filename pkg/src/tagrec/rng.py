"""Deterministic random stream derivation.

Every stochastic component draws from its own substream keyed by the global
seed plus a fixed stream tag and context integers (user index, metapath id,
layer, ...). Identical keys always yield an identical generator, across
processes and runs.
"""

from __future__ import annotations

import numpy as np

STREAM_METAPATH = 1
STREAM_ROUTING = 2
STREAM_PARAM_INIT = 3
STREAM_BPR = 4
STREAM_SKIPGRAM = 5
STREAM_EPOCH = 6
STREAM_SYNTHETIC = 7
STREAM_GRAD_CHECK = 8


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Return a generator seeded by (seed, *keys) via SeedSequence spawning."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)])
