"""Text keys for exported records.

Records are keyed by the 64-bit FNV-1a hash of the normalized token
sequence joined with single spaces. Consumers compute the same key from
the same normalization, so the hash constants here are part of the file
format.
"""

from __future__ import annotations

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def text_key(tokens) -> int:
    """Key of a normalized token sequence: FNV-1a 64 over the joined text."""
    return fnv1a64(" ".join(tokens).encode("utf-8"))
