"""Deterministic random streams derived from a seed and a key path."""

from __future__ import annotations

import zlib

import numpy as np


def _word(key: int | str) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode())
    k = int(key)
    if k < 0:
        raise ValueError("integer keys must be nonnegative")
    return k


def derive_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``.

    Streams depend only on the key path, so work split across processes
    reproduces a serial run exactly.
    """
    return np.random.default_rng([_word(seed), *(_word(k) for k in keys)])
