"""Node features: text keys, embedding providers, user-profile features.

Every tweet becomes one feature row: a text embedding concatenated with
four coarse account features. Embeddings come either from a hash-seeded
fallback (self-contained, deterministic) or from a precomputed `EMB1`
file keyed by the 64-bit FNV-1a hash of the normalized token sequence.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .data import DataError, Thread, UserProfile
from .preprocess import AliasTable, normalize_tweet

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
USER_FEATURE_DIM = 4
EMB1_MAGIC = b"EMB1"


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def text_key(tokens) -> int:
    """Key of a normalized token sequence: FNV-1a 64 over the joined text."""
    return fnv1a64(" ".join(tokens).encode("utf-8"))


def derive_seed(*parts) -> int:
    """Mix arbitrary labels into one 64-bit stream seed, order-sensitive."""
    return fnv1a64(b"\x1f".join(str(p).encode("utf-8") for p in parts))


def user_features(profile: UserProfile) -> np.ndarray:
    """Order-of-magnitude account features: [activity, listings, reach, verified].

    The reach term is floor(log10(followers / following)); when either count
    is zero the ratio is computed with +1 smoothing on both sides.
    """
    if profile.followers > 0 and profile.following > 0:
        ratio = profile.followers / profile.following
    else:
        ratio = (profile.followers + 1) / (profile.following + 1)
    return np.array(
        [
            math.ceil(math.log10(max(profile.tweet_count, 1))),
            math.ceil(math.log10(max(profile.listed_count, 1))),
            math.floor(math.log10(ratio)),
            1.0 if profile.verified else 0.0,
        ],
        dtype=np.float64,
    )


class HashEmbedding:
    """Deterministic fallback embeddings from per-token seeded unit vectors.

    Each token maps to a fixed pseudo-random unit vector seeded by
    (seed, fnv1a64(token)); a text embeds as the L2-normalized sum. No
    tokens means the zero vector.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            rng = np.random.default_rng(np.random.SeedSequence((self.seed, fnv1a64(token.encode("utf-8")))))
            vec = rng.standard_normal(self.dim)
            vec /= np.linalg.norm(vec)
            self._cache[token] = vec
        return vec

    def embed(self, tokens) -> np.ndarray:
        tokens = tuple(tokens)
        if not tokens:
            return np.zeros(self.dim, dtype=np.float64)
        total = np.zeros(self.dim, dtype=np.float64)
        for token in tokens:
            total += self._token_vector(token)
        norm = np.linalg.norm(total)
        if norm == 0.0:
            return np.zeros(self.dim, dtype=np.float64)
        return total / norm


class FileEmbedding:
    """Embeddings backed by an EMB1 table, with an optional fallback provider."""

    def __init__(self, table: dict[int, np.ndarray], dim: int, fallback=None):
        self.table = table
        self.dim = dim
        self.fallback = fallback
        if fallback is not None and fallback.dim != dim:
            raise ValueError(f"fallback dim {fallback.dim} != table dim {dim}")

    @classmethod
    def load(cls, path, fallback=None) -> "FileEmbedding":
        dim, table = read_emb1(path)
        return cls(table, dim, fallback)

    def embed(self, tokens) -> np.ndarray:
        key = text_key(tokens)
        vec = self.table.get(key)
        if vec is not None:
            return vec
        if self.fallback is not None:
            return self.fallback.embed(tokens)
        raise KeyError(f"no embedding for text key {key:#018x} and no fallback provider")


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
        raise DataError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 16:
        raise DataError(f"{path}: truncated header")
    (dim,) = struct.unpack_from("<I", raw, 4)
    (count,) = struct.unpack_from("<Q", raw, 8)
    if dim < 1:
        raise DataError(f"{path}: dim must be >= 1")
    record = 8 + 4 * dim
    expected = 16 + count * record
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes for {count} records, got {len(raw)}")
    table: dict[int, np.ndarray] = {}
    off = 16
    for _ in range(count):
        (key,) = struct.unpack_from("<Q", raw, off)
        if key in table:
            raise DataError(f"{path}: duplicate key {key:#018x}")
        vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=off + 8).astype(np.float64)
        table[key] = vec
        off += record
    return dim, table


def assemble_feature_matrix(thread: Thread, provider, alias_table: AliasTable | None = None) -> np.ndarray:
    """Per-tweet feature rows in thread order: [embedding || user features]."""
    rows = []
    for tweet in thread.tweets:
        pre = normalize_tweet(tweet.text, alias_table)
        emb = np.asarray(provider.embed(pre.tokens), dtype=np.float64)
        if emb.shape != (provider.dim,):
            raise ValueError(f"provider returned shape {emb.shape}, want ({provider.dim},)")
        rows.append(np.concatenate([emb, user_features(tweet.user)]))
    return np.vstack(rows)
