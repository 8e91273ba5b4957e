"""Seeded random streams.

Every random draw in the package comes from a PCG64 generator keyed by a
64-bit seed plus an optional tuple of stream indices.  Child streams are
derived through ``numpy.random.SeedSequence`` so that ``(seed, k)`` streams
are independent and reproducible on every platform.
"""

from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "PCG64"


def rng_stream(seed: int, *stream: int) -> np.random.Generator:
    """Return the generator for ``seed`` and the given stream path."""
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    entropy = [int(seed), *(int(s) for s in stream)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *stream: int) -> int:
    """Deterministic 64-bit child seed for ``(seed, *stream)``."""
    ss = np.random.SeedSequence([int(seed), *(int(s) for s in stream)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def choose_channel_indices(rng: np.random.Generator, total: int, keep: int) -> list[int]:
    """Sample ``keep`` distinct channel indices out of ``total`` without replacement.

    Indices are returned in the order they were drawn (not sorted).
    """
    if total < 0 or keep < 0:
        raise ValueError("channel counts must be non-negative")
    if keep > total:
        raise ValueError(f"cannot keep {keep} channels out of {total}")
    return [int(i) for i in rng.permutation(total)[:keep]]
