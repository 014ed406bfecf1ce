"""Reproducible random streams.

Every draw comes from numpy's PCG64 seeded through ``SeedSequence``. Replicate r of a
run with seed s uses the stream ``SeedSequence([s, r])``, so replicates are
independent of the order in which they are executed.

Gaussian variates are produced by inversion rather than numpy's ziggurat sampler:
u = (k + 1/2) / 2^53 with k uniform on [0, 2^53), then z = ndtri(u).
"""

import numpy as np
from scipy.special import ndtri

from cbsr.core.types import FloatArray, IntArray

_MANTISSA = 2**53


def stream(seed: int, replicate: int | None = None) -> np.random.Generator:
    """PCG64 generator for a run seed and an optional replicate index.

    Args:
        seed: Run seed
        replicate: Replicate index, None for a single draw

    Returns:
        The generator
    """
    entropy = [seed] if replicate is None else [seed, replicate]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def uniform(rng: np.random.Generator, size: int | tuple[int, ...]) -> FloatArray:
    """Open-interval uniforms on the 2^-53 grid."""
    k = rng.integers(0, _MANTISSA, size=size, dtype=np.uint64)
    return (k.astype(np.float64) + 0.5) / _MANTISSA


def normal(rng: np.random.Generator, size: int | tuple[int, ...]) -> FloatArray:
    """Standard normal variates by inversion of the normal CDF."""
    return np.asarray(ndtri(uniform(rng, size)), dtype=np.float64)


def bernoulli(rng: np.random.Generator, p: FloatArray) -> IntArray:
    """Binary draws with success probabilities p, as 0/1 integers."""
    return (uniform(rng, p.shape) < p).astype(np.int64)
