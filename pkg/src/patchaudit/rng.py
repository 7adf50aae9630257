"""Counter-based random streams.

All randomness in the package flows from a root seed through Philox
sub-streams keyed by (seed, purpose, index).  A sub-stream depends only on
its key, never on draw order, so parallel and sequential schedules produce
identical results.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# purpose tags keep sub-streams from colliding across modules
TAG_BOOTSTRAP = 1
TAG_SYNTH = 2
TAG_SAMPLER = 3
TAG_REPORT = 4
TAG_TEST = 7


def substream(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    """Return the generator for sub-stream (seed, tag, index)."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    key = np.array(
        [seed & _MASK64, ((tag & 0xFFFF) << 48 | (index & _MASK64 >> 16)) & _MASK64],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))
