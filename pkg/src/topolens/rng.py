"""Deterministic random streams.

Every source of randomness in the package draws from a counter-based Philox
generator keyed by (seed, *stream ids). Independent streams never interact,
so adding a consumer (an extra dropout site, one more init) cannot perturb
unrelated draws, and results are bit-reproducible for a fixed seed.
"""

import numpy as np

_STREAMS = {
    "init": 0,
    "dropout": 1,
    "triplets": 2,
    "synth": 3,
    "split": 4,
    "test": 5,
}


def stream(seed, name, *ids):
    """Return a Generator for the (seed, name, *ids) stream.

    `name` is one of the registered stream names; `ids` are small integers
    (layer index, epoch, batch, ...) that distinguish sub-streams.
    """
    if name not in _STREAMS:
        raise KeyError(f"unknown rng stream {name!r}")
    entropy = (int(seed) & 0xFFFFFFFFFFFFFFFF, _STREAMS[name]) + tuple(
        int(i) & 0xFFFFFFFFFFFFFFFF for i in ids
    )
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
