"""Weak rolling checksum.

For a window ``x[0..L)``::

    s1 = sum(x[i]) mod 2**16
    s2 = sum((L - i) * x[i]) mod 2**16
    weak = s1 + 2**16 * s2
"""

from __future__ import annotations

import numpy as np

MOD = 1 << 16
MASK = MOD - 1


def weak_parts(block: bytes) -> tuple[int, int]:
    n = len(block)
    if n < 1:
        raise ValueError("weak checksum of an empty block")
    s1 = 0
    s2 = 0
    for i, x in enumerate(block):
        s1 += x
        s2 += (n - i) * x
    return s1 & MASK, s2 & MASK


def weak_checksum(block: bytes) -> int:
    s1, s2 = weak_parts(block)
    return s1 | (s2 << 16)


def roll(state: tuple[int, int], out_byte: int, in_byte: int, L: int) -> tuple[int, int]:
    """Slide a window of length ``L`` one byte forward."""
    s1, s2 = state
    s1 = (s1 - out_byte + in_byte) & MASK
    s2 = (s2 - L * out_byte + s1) & MASK
    return s1, s2


def combine(state: tuple[int, int]) -> int:
    return state[0] | (state[1] << 16)


def rolling_checksums(data, L: int) -> np.ndarray:
    """Weak checksum of every length-``L`` window of ``data`` (uint32 array).

    Prefix sums give each window in O(1); uint64 wraparound is harmless
    because only the low 16 bits of each sum are kept.
    """
    buf = np.frombuffer(data, dtype=np.uint8) if not isinstance(data, np.ndarray) else data
    n = buf.size
    if n < L or L < 1:
        return np.empty(0, dtype=np.uint32)
    x = buf.astype(np.uint64)
    p = np.zeros(n + 1, dtype=np.uint64)
    np.cumsum(x, out=p[1:])
    q = np.zeros(n + 1, dtype=np.uint64)
    np.cumsum(x * np.arange(n, dtype=np.uint64), out=q[1:])
    k = np.arange(n - L + 1, dtype=np.uint64)
    s1 = p[L:] - p[:-L]
    s2 = (k + np.uint64(L)) * s1 - (q[L:] - q[:-L])
    return ((s1 & np.uint64(MASK)) | ((s2 & np.uint64(MASK)) << np.uint64(16))).astype(np.uint32)


def block_checksums(data, L: int) -> np.ndarray:
    """Weak checksum of each consecutive block; the last block may be short."""
    buf = np.frombuffer(data, dtype=np.uint8) if not isinstance(data, np.ndarray) else data
    n = buf.size
    full = n // L
    out = np.empty(full + (1 if n % L else 0), dtype=np.uint32)
    if full:
        blocks = buf[: full * L].reshape(full, L).astype(np.uint64)
        weights = np.arange(L, 0, -1, dtype=np.uint64)
        s1 = blocks.sum(axis=1) & np.uint64(MASK)
        s2 = (blocks @ weights) & np.uint64(MASK)
        out[:full] = (s1 | (s2 << np.uint64(16))).astype(np.uint32)
    if n % L:
        out[full] = weak_checksum(bytes(buf[full * L:]))
    return out
