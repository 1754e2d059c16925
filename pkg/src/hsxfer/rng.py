"""Named, counter-based random streams.

Every stochastic operation draws from its own stream, identified by a seed and
a stream id (int or string). Streams are Philox generators keyed by a
``SeedSequence`` over ``(seed, stream)``, so draws do not depend on the order in
which other streams were consumed.
"""
import hashlib

import numpy as np

DEFAULT_SEED = 42


def stream_key(stream) -> int:
    if isinstance(stream, (int, np.integer)):
        return int(stream)
    digest = hashlib.sha256(str(stream).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed=DEFAULT_SEED, stream=0) -> np.random.Generator:
    """Return a fresh generator for ``(seed, stream)``; identical args give identical draws."""
    keys = [int(seed), stream_key(stream)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(keys)))
