"""Synthetic datasets with controllable class signal.

Used by the test suite and demos: hash-fallback embeddings make threads
whose tweets draw from disjoint vocabularies linearly separable, and a
late-signal variant hides the class vocabulary until a chosen delay so
early-detection curves have something to show.
"""

from __future__ import annotations

import numpy as np

from .data import BINARY, Dataset, Label, Thread, Tweet, UserProfile

RUMOUR_VOCAB = ("hoax", "fabricated", "debunk", "conspiracy", "unconfirmed",
                "allegedly", "shocking", "coverup", "exposed", "viral")
NEWS_VOCAB = ("confirmed", "official", "statement", "spokesperson", "report",
              "sources", "update", "briefing", "authorities", "published")
NEUTRAL_VOCAB = ("the", "a", "today", "people", "city", "still", "waiting",
                 "watching", "news", "here", "now", "more")

_BASE_TS = 1_420_000_000  # early 2015, like the source corpora


def _sentence(rng: np.random.Generator, vocab, n_words: int) -> str:
    return " ".join(vocab[int(i)] for i in rng.integers(0, len(vocab), size=n_words))


def _profile(rng: np.random.Generator) -> UserProfile:
    return UserProfile(
        tweet_count=int(rng.integers(1, 20_000)),
        listed_count=int(rng.integers(0, 200)),
        followers=int(rng.integers(1, 50_000)),
        following=int(rng.integers(1, 5_000)),
        verified=bool(rng.integers(0, 2)),
    )


def _make_thread(thread_id: str, event: str, label_value: str, rng: np.random.Generator,
                 n_replies: int, text_for) -> Thread:
    t0 = _BASE_TS + int(rng.integers(0, 30 * 24 * 3600))
    source_id = int(rng.integers(10**8, 10**9))
    tweets = [Tweet(source_id, text_for(0, 0.0), t0, None, _profile(rng))]
    elapsed = 0.0
    for i in range(n_replies):
        elapsed += float(rng.uniform(0.2, 8.0))  # hours
        parent = tweets[int(rng.integers(0, len(tweets)))]
        reply_ts = t0 + int(elapsed * 3600)
        tweets.append(Tweet(source_id + i + 1, text_for(i + 1, elapsed),
                            max(reply_ts, parent.created_at), parent.id, _profile(rng)))
    return Thread.build(thread_id, event, Label(BINARY, label_value), tweets)


def make_separable(n_threads: int = 200, n_events: int = 4, seed: int = 0,
                   balance: float = 0.5) -> Dataset:
    """Binary dataset whose tweet vocabulary fully determines the class."""
    rng = np.random.default_rng(seed)
    dataset = Dataset(scheme=BINARY)
    n_rumour = int(round(n_threads * balance))
    for i in range(n_threads):
        value = "rumour" if i < n_rumour else "non_rumour"
        vocab = RUMOUR_VOCAB if value == "rumour" else NEWS_VOCAB
        event = f"event{i % n_events:02d}"

        def text_for(_pos, _elapsed, vocab=vocab, rng=rng):
            return _sentence(rng, vocab, int(rng.integers(4, 9)))

        thread = _make_thread(f"{event}-t{i:04d}", event, value, rng,
                              n_replies=int(rng.integers(2, 6)), text_for=text_for)
        dataset.events.setdefault(event, []).append(thread)
    dataset.events = {k: dataset.events[k] for k in sorted(dataset.events)}
    return dataset


def make_imbalanced(n_majority: int = 60, n_minority: int = 12, n_events: int = 3,
                    seed: int = 0, noise: float = 0.35) -> Dataset:
    """Skewed binary dataset with noisy vocabulary overlap.

    The minority class is rumour; `noise` is the chance a tweet draws from
    the neutral vocabulary instead of its class one, keeping the task
    learnable but not trivial.
    """
    rng = np.random.default_rng(seed)
    dataset = Dataset(scheme=BINARY)
    total = n_majority + n_minority
    for i in range(total):
        value = "rumour" if i < n_minority else "non_rumour"
        vocab = RUMOUR_VOCAB if value == "rumour" else NEWS_VOCAB
        event = f"event{i % n_events:02d}"

        def text_for(_pos, _elapsed, vocab=vocab, rng=rng):
            pick = NEUTRAL_VOCAB if rng.random() < noise else vocab
            return _sentence(rng, pick, int(rng.integers(4, 9)))

        thread = _make_thread(f"{event}-t{i:04d}", event, value, rng,
                              n_replies=int(rng.integers(2, 6)), text_for=text_for)
        dataset.events.setdefault(event, []).append(thread)
    dataset.events = {k: dataset.events[k] for k in sorted(dataset.events)}
    return dataset


def make_late_signal(n_threads: int = 60, n_events: int = 3, seed: int = 0,
                     signal_after_hours: float = 12.0) -> Dataset:
    """Class vocabulary appears only in replies after `signal_after_hours`.

    Early cohorts of every thread look alike (neutral vocabulary), so
    accuracy at delay 0 should not beat accuracy at the last checkpoint.
    """
    rng = np.random.default_rng(seed)
    dataset = Dataset(scheme=BINARY)
    for i in range(n_threads):
        value = "rumour" if i % 2 == 0 else "non_rumour"
        vocab = RUMOUR_VOCAB if value == "rumour" else NEWS_VOCAB
        event = f"event{i % n_events:02d}"
        t0 = _BASE_TS + int(rng.integers(0, 30 * 24 * 3600))
        source_id = int(rng.integers(10**8, 10**9))
        tweets = [Tweet(source_id, _sentence(rng, NEUTRAL_VOCAB, 6), t0, None, _profile(rng))]
        for j, elapsed in enumerate((1.0, 4.0, signal_after_hours + 2.0, signal_after_hours + 6.0)):
            pick = vocab if elapsed > signal_after_hours else NEUTRAL_VOCAB
            tweets.append(Tweet(source_id + j + 1, _sentence(rng, pick, 6),
                                t0 + int(elapsed * 3600), source_id, _profile(rng)))
        thread = Thread.build(f"{event}-t{i:04d}", event, Label(BINARY, value), tweets)
        dataset.events.setdefault(event, []).append(thread)
    dataset.events = {k: dataset.events[k] for k in sorted(dataset.events)}
    return dataset
