"""Seeded random streams.

Every consumer draws from its own PCG64 stream derived from
``SeedSequence([seed, stream_id, *extra])``, so adding draws in one place
(say, the channel simulator) never shifts the numbers seen by another
(say, weight initialization).
"""

import numpy as np

GENERATOR = "PCG64"
RNG_VERSION = 1

STREAMS = {
    "init": 0,
    "attack": 1,
    "channel": 2,
    "noise": 3,
    "data": 4,
}


def make_rng(seed, stream, *extra):
    """Return a fresh generator for ``stream``.

    ``extra`` integers further split the stream, e.g. a trial index.
    """
    if stream not in STREAMS:
        raise KeyError(f"unknown rng stream {stream!r}; expected one of {sorted(STREAMS)}")
    if seed is None or int(seed) < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
    entropy = [int(seed), STREAMS[stream], *(int(e) for e in extra)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
