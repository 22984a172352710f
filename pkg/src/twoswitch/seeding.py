"""Deterministic seed derivation for reproducible Monte Carlo runs.

Every experiment is driven by one 64-bit scenario seed. Trial ``i`` derives
its own seed through a splitmix64 mix of ``(seed, i)``, and each trial owns
two independent sub-streams: one for the channel switches and one for the
Gaussian noises. Because every stream is a pure function of
``(seed, trial, stream)``, results are identical no matter how trials are
chunked across worker threads.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

SWITCH_STREAM = 0
NOISE_STREAM = 1


def mix64(x: int) -> int:
    """splitmix64 finalizer: a bijective 64-bit avalanche mix."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def derive_seed(seed: int, *path: int) -> int:
    """Fold integer path components into ``seed`` one splitmix64 step each.

    ``derive_seed(s, i)`` is the seed of trial ``i``;
    ``derive_seed(s, i, SWITCH_STREAM)`` and
    ``derive_seed(s, i, NOISE_STREAM)`` are its two sub-streams.
    """
    h = seed & _MASK64
    for component in path:
        h = mix64((h + _GOLDEN + (component & _MASK64)) & _MASK64)
    return h


def generator(seed: int, *path: int) -> np.random.Generator:
    """PCG64 generator for the stream identified by ``(seed, *path)``."""
    return np.random.default_rng(derive_seed(seed, *path))


def spawn_pair(rng_or_seed) -> tuple[np.random.Generator, np.random.Generator]:
    """Return (switch_rng, noise_rng) from a seed or an existing generator."""
    if isinstance(rng_or_seed, np.random.Generator):
        children = rng_or_seed.spawn(2)
        return children[0], children[1]
    seed = int(rng_or_seed)
    return generator(seed, 0, SWITCH_STREAM), generator(seed, 0, NOISE_STREAM)
