"""Seeded random streams.

Every generator is PCG64 (O'Neill, 2014) fed by a NumPy ``SeedSequence``
built from an integer seed plus integer stream keys. Streams with different
keys are statistically independent, so one seed can drive many components
without their draws interfering.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, *keys) -> np.random.Generator:
    """Independent PCG64 generator for ``(seed, *keys)``.

    String keys are hashed with CRC-32 so that named streams are stable
    across processes and platforms.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        entropy.append(zlib.crc32(key.encode()) if isinstance(key, str) else int(key))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
