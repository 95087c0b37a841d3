"""Multifold Oversampling: per-event class balancing by contextual augmentation.

Minority-label threads are copied with a fraction of their tweets rewritten
through token substitution. Tweets are picked either uniformly (random
strategy) or by an influence distribution that favours keyword-poor tweets
(nonrandom strategy). Substitutes come from a precomputed candidate table,
with a seeded thread-vocabulary swap as the self-contained fallback.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import AUGMENTED, DataError, Dataset, Provenance, Thread
from .features import derive_seed, fnv1a64, text_key
from .preprocess import AliasTable, PreprocessedText, is_keyword, normalize_tweet

RANDOM = "random"
NONRANDOM = "nonrandom"
CND1_MAGIC = b"CND1"
SUBSTITUTION_RATE = 0.15

_SEED_MASK = 0xFFFFFFFFFFFFFFFF
_ROUND_TAG = fnv1a64(b"threadforge.mos.round-choice")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def thread_stream(seed: int, thread_id: str, fold_index: int) -> np.random.Generator:
    """Independent RNG stream per (seed, thread, fold): schedule-invariant."""
    entropy = (seed & _SEED_MASK, fnv1a64(thread_id.encode("utf-8")), fold_index)
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass(frozen=True)
class AugmentationStrategy:
    kind: str = NONRANDOM
    p_aug: float = 0.20
    fold_cap: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (RANDOM, NONRANDOM):
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if not 0.0 < self.p_aug <= 1.0:
            raise ValueError(f"p_aug must be in (0, 1], got {self.p_aug}")
        if self.fold_cap < 1:
            raise ValueError(f"fold_cap must be >= 1, got {self.fold_cap}")


class CandidateTable:
    """Ranked substitute tokens keyed by (text key, token index)."""

    def __init__(self, entries: dict[tuple[int, int], tuple[str, ...]] | None = None):
        self.entries: dict[tuple[int, int], tuple[str, ...]] = {}
        for (key, idx), tokens in (entries or {}).items():
            self.add(key, idx, tokens)

    def add(self, key: int, token_index: int, tokens) -> None:
        tokens = tuple(tokens)
        if not tokens:
            raise ValueError(f"empty candidate list for key {key:#x} index {token_index}")
        self.entries[(key, token_index)] = tokens

    def lookup(self, key: int, token_index: int) -> tuple[str, ...] | None:
        return self.entries.get((key, token_index))

    def __len__(self) -> int:
        return len(self.entries)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(CND1_MAGIC)
            fh.write(struct.pack("<Q", len(self.entries)))
            for (key, idx), tokens in sorted(self.entries.items()):
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

    @classmethod
    def load(cls, path) -> "CandidateTable":
        raw = Path(path).read_bytes()
        if raw[:4] != CND1_MAGIC:
            raise DataError(f"{path}: bad magic {raw[:4]!r}")
        if len(raw) < 12:
            raise DataError(f"{path}: truncated header")
        (count,) = struct.unpack_from("<Q", raw, 4)
        table = cls()
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
                if (key, idx) in table.entries:
                    raise DataError(f"{path}: duplicate record for key {key:#018x} index {idx}")
                table.add(key, idx, tokens)
        except (struct.error, UnicodeDecodeError, ValueError) as exc:
            raise DataError(f"{path}: corrupt candidate record: {exc}")
        if off != len(raw):
            raise DataError(f"{path}: {len(raw) - off} trailing bytes")
        return table


@dataclass(frozen=True)
class InfluenceDistribution:
    weights: np.ndarray
    normalized: np.ndarray


def influence_weights(thread: Thread, alias_table: AliasTable | None = None) -> InfluenceDistribution:
    """Per-tweet substitution weight: token count minus keyword-token count.

    Normalized to probabilities; if every weight is zero the distribution
    falls back to uniform over tweets that have at least one token (all
    zeros when the thread has no tokens at all).
    """
    pres = [normalize_tweet(t.text, alias_table) for t in thread.tweets]
    return influence_from_preprocessed(pres)


def influence_from_preprocessed(pres: list[PreprocessedText]) -> InfluenceDistribution:
    weights = np.array([p.non_keyword_count() for p in pres], dtype=np.float64)
    total = weights.sum()
    if total > 0:
        normalized = weights / total
    else:
        has_tokens = np.array([len(p.tokens) > 0 for p in pres], dtype=np.float64)
        count = has_tokens.sum()
        normalized = has_tokens / count if count > 0 else np.zeros_like(weights)
    return InfluenceDistribution(weights, normalized)


@dataclass
class AugmentStats:
    tweets_selected: int = 0
    tokens_substituted: int = 0
    tweets_unchanged: int = 0
    threads_created: int = 0


def substitute_tweet(
    pre: PreprocessedText,
    key: int,
    candidates: CandidateTable | None,
    rng: np.random.Generator,
    fallback_vocab: tuple[str, ...] = (),
    stats: AugmentStats | None = None,
) -> PreprocessedText:
    """Rewrite a seeded sample of non-keyword positions.

    Picks up to max(1, round(0.15 * non-keyword count)) positions. Each
    takes the top-ranked table candidate differing from the original; with
    no table entry it swaps in a seeded-random different token from
    `fallback_vocab`. Keyword tokens are never touched.
    """
    positions = [i for i, kw in enumerate(pre.keyword_mask) if not kw]
    if not positions:
        return pre
    s = min(max(1, round_half_up(SUBSTITUTION_RATE * len(positions))), len(positions))
    chosen = sorted(int(positions[j]) for j in rng.choice(len(positions), size=s, replace=False))
    tokens = list(pre.tokens)
    mask = list(pre.keyword_mask)
    for pos in chosen:
        original = tokens[pos]
        replacement = None
        entry = candidates.lookup(key, pos) if candidates is not None else None
        if entry is not None:
            replacement = next((c for c in entry if c != original), None)
        elif fallback_vocab:
            options = [v for v in fallback_vocab if v != original]
            if options:
                replacement = options[int(rng.integers(len(options)))]
        if replacement is not None:
            tokens[pos] = replacement
            mask[pos] = is_keyword(replacement)
            if stats is not None:
                stats.tokens_substituted += 1
    return PreprocessedText(tuple(tokens), tuple(mask))


def augment_thread(
    thread: Thread,
    strategy: AugmentationStrategy,
    candidates: CandidateTable | None,
    rng: np.random.Generator,
    fold_index: int = 1,
    alias_table: AliasTable | None = None,
    stats: AugmentStats | None = None,
) -> Thread:
    """One augmented copy of a thread: same topology, label, timestamps, users.

    Selects k = max(1, round(p_aug * n)) distinct tweets, uniformly for the
    random strategy or by the influence distribution (without replacement,
    zero-weight tweets excluded) for the nonrandom one, and rewrites each
    via substitute_tweet. Provenance records the parent and fold index.
    """
    n = len(thread.tweets)
    pres = [normalize_tweet(t.text, alias_table) for t in thread.tweets]
    k = max(1, round_half_up(strategy.p_aug * n))
    if strategy.kind == RANDOM:
        selected = rng.choice(n, size=min(k, n), replace=False)
    else:
        dist = influence_from_preprocessed(pres)
        eligible = int(np.count_nonzero(dist.normalized))
        if eligible == 0:
            selected = np.array([], dtype=np.int64)
        else:
            selected = rng.choice(n, size=min(k, eligible), replace=False, p=dist.normalized)
    vocab = tuple(sorted({
        tok for p in pres for tok, kw in zip(p.tokens, p.keyword_mask) if not kw
    }))

    new_tweets = list(thread.tweets)
    for i in sorted(int(j) for j in selected):
        pre = pres[i]
        new_pre = substitute_tweet(pre, text_key(pre.tokens), candidates, rng, vocab, stats)
        if stats is not None:
            stats.tweets_selected += 1
            if new_pre.tokens == pre.tokens:
                stats.tweets_unchanged += 1
        old = new_tweets[i]
        new_tweets[i] = type(old)(old.id, new_pre.joined, old.created_at, old.parent_id, old.user)
    provenance = Provenance(AUGMENTED, parent_thread_id=thread.thread_id, fold_index=fold_index)
    if stats is not None:
        stats.threads_created += 1
    return Thread.build(
        f"{thread.thread_id}#aug{fold_index}", thread.event, thread.label, new_tweets, provenance
    )


def oversample_label(
    threads: list[Thread],
    n: int,
    strategy: AugmentationStrategy,
    candidates: CandidateTable | None,
    seed: int,
    alias_table: AliasTable | None = None,
    stats: AugmentStats | None = None,
) -> list[Thread]:
    """Produce exactly n augmented threads from one label's originals.

    n_fold = min(n // n_label, fold_cap) full rounds cover every thread;
    the remainder (and any deficit left by the cap) is filled by extra
    rounds over seeded-randomly chosen distinct threads.
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if n == 0:
        return []
    if not threads:
        raise ValueError("cannot oversample an empty label")
    n_label = len(threads)
    n_fold = min(n // n_label, strategy.fold_cap)
    out: list[Thread] = []

    def run(thread: Thread, fold: int) -> None:
        rng = thread_stream(seed, thread.thread_id, fold)
        out.append(augment_thread(thread, strategy, candidates, rng, fold, alias_table, stats))

    for fold in range(1, n_fold + 1):
        for t in threads:
            run(t, fold)
    remaining = n - n_fold * n_label
    fold = n_fold
    while remaining > 0:
        fold += 1
        take = min(remaining, n_label)
        choice_rng = np.random.default_rng(np.random.SeedSequence((seed & _SEED_MASK, _ROUND_TAG, fold)))
        picks = sorted(int(i) for i in choice_rng.choice(n_label, size=take, replace=False))
        for i in picks:
            run(threads[i], fold)
        remaining -= take
    return out


def oversample_dataset(
    dataset: Dataset,
    strategy: AugmentationStrategy,
    candidates: CandidateTable | None,
    seed: int,
    alias_table: AliasTable | None = None,
    stats: AugmentStats | None = None,
) -> Dataset:
    """Balance every event: each label with originals is raised to the event max.

    Originals are kept verbatim and augmented copies appended; labels with
    zero originals stay empty (nothing to augment from).
    """
    from .data import SCHEME_VALUES

    out = Dataset(scheme=dataset.scheme)
    for event, threads in dataset.events.items():
        buckets: dict[str, list[Thread]] = {v: [] for v in SCHEME_VALUES[dataset.scheme]}
        for t in threads:
            buckets[t.label.value].append(t)
        n_max = max((len(b) for b in buckets.values()), default=0)
        new_threads = list(threads)
        for value in SCHEME_VALUES[dataset.scheme]:
            bucket = buckets[value]
            if not bucket:
                continue
            bucket_seed = derive_seed(seed, event, value)
            new_threads.extend(
                oversample_label(bucket, n_max - len(bucket), strategy, candidates,
                                 bucket_seed, alias_table, stats)
            )
        out.events[event] = new_threads
    return out
