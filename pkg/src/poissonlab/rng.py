"""Counter-based random streams.

A stream is keyed by ``(seed, tag, *index)`` and backed by Philox, so the
draws made for one purpose never shift when another purpose draws more or
fewer numbers.
"""
import zlib

import numpy as np

_MASK32 = 0xFFFFFFFF


def stream(seed, tag, *index):
    seed = int(seed)
    if seed < 0 or seed >= 1 << 64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    words = [seed & _MASK32, seed >> 32, zlib.crc32(tag.encode("utf-8"))]
    words.extend(int(i) & _MASK32 for i in index)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
