"""Counter-based seed derivation for reproducible parallel Monte Carlo.

Every random object in the toolkit is seeded by a pure 64-bit mix of a
master seed and a tuple of integer indices (realization index, path
index, cell coordinates, ...).  Results are therefore independent of
worker count and of the order in which work items are scheduled.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(z: int) -> int:
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def mix(master: int, *indices: int) -> int:
    """Derive a 64-bit key from a master seed and integer indices.

    Pure function: mix(m, a, b) is a fixed key, no global state.  Signed
    indices are folded into the unsigned domain so cell coordinates may
    be negative.
    """
    key = _splitmix64(int(master) & _MASK)
    for ix in indices:
        key = _splitmix64(key ^ (int(ix) & _MASK))
    return key


def generator(master: int, *indices: int) -> np.random.Generator:
    """Counter-based generator for the given (master, indices) stream."""
    return np.random.Generator(np.random.Philox(key=mix(master, *indices)))


# Stream tags keep independent uses of the same master seed decorrelated.
# Every generator in the package is derived as
#   generator(master_seed, STREAM_*, further indices...)
STREAM_MODES = 1       # Gaussian spectral modes of one field realization
STREAM_CELLS = 2       # Poisson points of one spatial cell
STREAM_PATHS = 3       # Brownian paths: (omega index, path index)
STREAM_FIELDS = 4      # ensemble field realizations: (omega index,)
STREAM_CHECKS = 5      # exact-identity Monte Carlo companions
STREAM_LAW = 6         # direct draws from analytic laws (limit v, d=4 sampler)
STREAM_PILOT = 7       # pilot runs for adaptive inner sample sizing
