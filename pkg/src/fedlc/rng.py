"""Named, seed-derived random streams.

Every source of randomness in the simulator draws from a generator keyed by
(root seed, subsystem tag, *indices).  Two different call sites never share a
stream, so running clients or classes in parallel cannot change any output.
"""

from __future__ import annotations

import numpy as np

# subsystem tags; values are arbitrary but frozen (changing them changes every stream)
MODEL = 1
FEATURES = 2
SIZES = 3
SAMPLES = 4
DIRICHLET = 5
SHARD = 6
INIT = 7
SHUFFLE = 8
PROBE = 9
SAMPLING = 10


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return the generator for the stream addressed by (seed, *path)."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(p) for p in path]]))
