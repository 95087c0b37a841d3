"""Test fixtures: thread builders, tiny datasets, archive-on-disk writer."""

import json
from pathlib import Path

from threadforge.data import BINARY, Dataset, Label, Thread, Tweet, UserProfile

BASE_TS = 1_420_000_000


def tweet(i, text, parent=None, at=None, user=None):
    return Tweet(i, text, BASE_TS + (at if at is not None else i), parent,
                 user or UserProfile())


def thread(thread_id="t1", event="ev", value="rumour", texts=("source text here",),
           scheme=BINARY):
    """Chain thread: tweet i replies to tweet i-1."""
    tweets = [tweet(100, texts[0])]
    for i, text in enumerate(texts[1:], start=1):
        tweets.append(tweet(100 + i, text, parent=100 + i - 1))
    return Thread.build(thread_id, event, Label(scheme, value), tweets)


def star_thread(thread_id="s1", event="ev", value="rumour", n_children=3):
    tweets = [tweet(200, "root post about the story", at=0)]
    for i in range(n_children):
        tweets.append(tweet(201 + i, f"reply number {i} with words", parent=200, at=10 + i))
    return Thread.build(thread_id, event, Label(BINARY, value), tweets)


def counts_dataset(spec, texts=("alpha beta gamma delta", "more plain words here")):
    """spec: {event: (n_rumour, n_non_rumour)} with chain threads."""
    dataset = Dataset(scheme=BINARY)
    for event, (n_r, n_n) in spec.items():
        bucket = []
        serial = 0
        for value, count in (("rumour", n_r), ("non_rumour", n_n)):
            for _ in range(count):
                bucket.append(thread(f"{event}-{serial:03d}", event, value, texts))
                serial += 1
        dataset.events[event] = bucket
    return dataset


# ---------------------------------------------------------------------------
# On-disk archive fixture (raw ingestion layout)


def write_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj), encoding="utf-8")


def tweet_record(tweet_id, text, created_at, user=None):
    rec = {"id": tweet_id, "text": text, "created_at": created_at}
    if user is not None:
        rec["user"] = user
    return rec


def write_archive_thread(root, event, thread_id, source, reactions, structure,
                         annotation):
    """source/reactions are tweet records; structure the nested id dict."""
    base = Path(root) / event / str(thread_id)
    write_json(base / "source-tweets" / f"{source['id']}.json", source)
    for rec in reactions:
        write_json(base / "reactions" / f"{rec['id']}.json", rec)
    write_json(base / "structure.json", structure)
    write_json(base / "annotation.json", annotation)
    return base
