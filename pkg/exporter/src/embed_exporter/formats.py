"""Binary writers and readers for the exchange files.

EMB1 holds one embedding vector per distinct normalized text:

    b"EMB1" | u32 dim | u64 count | count * (u64 key | dim * f32)

CND1 holds ranked substitute tokens per (text key, token index):

    b"CND1" | u64 count | count * (u64 key | u16 index | u8 k
                                   | k * (u16 len | len bytes utf-8))

Everything is little-endian and records are sorted by key (EMB1) or by
(key, index) (CND1), so identical content produces identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

EMB1_MAGIC = b"EMB1"
CND1_MAGIC = b"CND1"


class FormatError(ValueError):
    """A file does not follow the EMB1/CND1 layout."""


def write_emb1(path, dim: int, items) -> None:
    """Write an EMB1 embedding table (records sorted by key, little-endian)."""
    rows = sorted(items)
    with open(path, "wb") as fh:
        fh.write(EMB1_MAGIC)
        fh.write(struct.pack("<I", dim))
        fh.write(struct.pack("<Q", len(rows)))
        for key, vec in rows:
            vec = np.asarray(vec, dtype=np.float32)
            if vec.shape != (dim,):
                raise ValueError(f"embedding for key {key:#x} has shape {vec.shape}, want ({dim},)")
            fh.write(struct.pack("<Q", key))
            fh.write(vec.astype("<f4").tobytes())


def read_emb1(path) -> tuple[int, dict[int, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != EMB1_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header")
    (dim,) = struct.unpack_from("<I", raw, 4)
    (count,) = struct.unpack_from("<Q", raw, 8)
    if dim < 1:
        raise FormatError(f"{path}: dim must be >= 1")
    record = 8 + 4 * dim
    expected = 16 + count * record
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {count} records, got {len(raw)}")
    table: dict[int, np.ndarray] = {}
    off = 16
    for _ in range(count):
        (key,) = struct.unpack_from("<Q", raw, off)
        if key in table:
            raise FormatError(f"{path}: duplicate key {key:#018x}")
        vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=off + 8).astype(np.float64)
        table[key] = vec
        off += record
    return dim, table


def write_cnd1(path, entries: dict[tuple[int, int], tuple[str, ...]]) -> None:
    """Write a CND1 candidate table (records sorted by (key, index))."""
    with open(path, "wb") as fh:
        fh.write(CND1_MAGIC)
        fh.write(struct.pack("<Q", len(entries)))
        for (key, idx), tokens in sorted(entries.items()):
            if not tokens:
                raise ValueError(f"empty candidate list for key {key:#x} index {idx}")
            if not 0 <= idx < 1 << 16:
                raise ValueError(f"token index {idx} out of u16 range")
            if len(tokens) > 255:
                raise ValueError(f"too many candidates ({len(tokens)}) at key {key:#x}")
            fh.write(struct.pack("<QHB", key, idx, len(tokens)))
            for token in tokens:
                raw = token.encode("utf-8")
                if len(raw) > 0xFFFF:
                    raise ValueError("candidate token too long")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)


def read_cnd1(path) -> dict[tuple[int, int], tuple[str, ...]]:
    raw = Path(path).read_bytes()
    if raw[:4] != CND1_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header")
    (count,) = struct.unpack_from("<Q", raw, 4)
    entries: dict[tuple[int, int], tuple[str, ...]] = {}
    off = 12
    try:
        for _ in range(count):
            key, idx, k = struct.unpack_from("<QHB", raw, off)
            off += 11
            tokens = []
            for _ in range(k):
                (length,) = struct.unpack_from("<H", raw, off)
                off += 2
                tokens.append(raw[off:off + length].decode("utf-8"))
                off += length
            if (key, idx) in entries:
                raise FormatError(f"{path}: duplicate record for key {key:#018x} index {idx}")
            if not tokens:
                raise FormatError(f"{path}: empty candidate list for key {key:#018x} index {idx}")
            entries[(key, idx)] = tuple(tokens)
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt candidate record: {exc}")
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return entries
