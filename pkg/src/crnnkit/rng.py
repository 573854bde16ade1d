"""Seeded random streams.

Every random draw in the package comes from a numpy ``Generator`` backed by
PCG64, keyed by a tuple of integers. Streams for different purposes (stage of
the augmentation chain, epoch shuffle, dropout masks) are derived from the
global seed plus a purpose key, so adding a consumer never shifts the draws
of another one.
"""
from __future__ import annotations

import zlib

import numpy as np

ALGORITHM = "PCG64"


def _key_int(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    part = int(part)
    if part < 0:
        raise ValueError("stream keys must be non-negative")
    return part


def stream(seed: int, *key) -> np.random.Generator:
    """Return an independent generator for ``(seed, *key)``.

    String key parts are hashed with CRC32 so stage names can be used
    directly, e.g. ``stream(42, "cutout", 17)``.
    """
    entropy = [_key_int(seed)] + [_key_int(k) for k in key]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
