"""Counter-based random streams for reproducible, thread-count-independent Monte Carlo.

Every random draw in the package comes from a Philox bit generator keyed by
(master seed, purpose tag, stream index).  Purposes separate independent
noise sources (market Brownian increments, investor draws, projection
directions, ...), so a bump-and-revalue rerun that passes the same seed and
purpose reuses the exact same numbers (common random numbers).

Path-level increments are produced in fixed chunks of CHUNK paths; chunk k of
a purpose uses stream index k.  The layout depends only on (seed, purpose,
path index), never on thread count or on how many paths the caller requests.
"""
from __future__ import annotations

import hashlib

import numpy as np

# Fixed path-chunk size; part of the reproducibility contract.
CHUNK = 16384

_PURPOSE_BITS = 16
_INDEX_MASK = (1 << 48) - 1


def _purpose_code(purpose: str) -> int:
    digest = hashlib.sha256(purpose.encode("utf-8")).digest()
    return int.from_bytes(digest[:2], "big")


def substream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Generator for stream `index` of `purpose` under a master seed.

    The Philox key packs the purpose code into the top 16 bits of the second
    key word and the stream index (< 2**48) into the rest.
    """
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    if index < 0 or index > _INDEX_MASK:
        raise ValueError("stream index out of range")
    word = (_purpose_code(purpose) << 48) | int(index)
    key = np.array([np.uint64(seed), np.uint64(word)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def normal_block(seed: int, purpose: str, start: int, count: int, shape: tuple[int, ...]) -> np.ndarray:
    """Standard-normal draws for paths [start, start+count), each of trailing `shape`.

    Paths are tiled in chunks of CHUNK; path p always receives the same
    numbers for a given (seed, purpose), regardless of the requested range.
    """
    out = np.empty((count,) + shape, dtype=np.float64)
    per_path = int(np.prod(shape)) if shape else 1
    pos = 0
    p = start
    while pos < count:
        chunk_idx = p // CHUNK
        offset = p % CHUNK
        take = min(CHUNK - offset, count - pos)
        gen = substream(seed, purpose, chunk_idx)
        block = gen.standard_normal((CHUNK, per_path))
        out[pos:pos + take] = block[offset:offset + take].reshape((take,) + shape)
        pos += take
        p += take
    return out


def chunk_ranges(n_paths: int, chunk: int = CHUNK):
    """Yield (start, count) pairs covering [0, n_paths) in fixed chunks."""
    start = 0
    while start < n_paths:
        yield start, min(chunk, n_paths - start)
        start += chunk
