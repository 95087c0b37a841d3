"""Threads, events, datasets: in-memory model, archive ingestion, canonical file.

A thread is a source tweet plus replies whose parent links form a tree; a
dataset groups threads by newsworthy event under one label scheme. The raw
input is a PHEME-style directory archive; the canonical on-disk form is
`threads.jsonl`, one record per thread with a stable field order.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

BINARY = "binary"
TERNARY = "ternary"
SCHEME_VALUES = {
    BINARY: ("rumour", "non_rumour"),
    TERNARY: ("true", "false", "unverified"),
}


class DataError(Exception):
    """Base class for data-layer failures (exit code 2 territory)."""


class ThreadStructureError(DataError):
    """A thread's reply links do not form a timestamp-ordered tree."""


class IngestError(DataError):
    """An archive file could not be read at all."""


@dataclass(frozen=True)
class UserProfile:
    tweet_count: int = 0
    listed_count: int = 0
    followers: int = 0
    following: int = 0
    verified: bool = False

    def __post_init__(self):
        for name in ("tweet_count", "listed_count", "followers", "following"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def is_default(self) -> bool:
        return self == UserProfile()


@dataclass(frozen=True)
class Tweet:
    id: int
    text: str
    created_at: int  # UTC seconds
    parent_id: int | None
    user: UserProfile


@dataclass(frozen=True)
class Label:
    scheme: str
    value: str

    def __post_init__(self):
        values = SCHEME_VALUES.get(self.scheme)
        if values is None:
            raise ValueError(f"unknown label scheme {self.scheme!r}")
        if self.value not in values:
            raise ValueError(f"label {self.value!r} not in scheme {self.scheme!r}")

    @property
    def index(self) -> int:
        return SCHEME_VALUES[self.scheme].index(self.value)


ORIGINAL = "original"
AUGMENTED = "augmented"


@dataclass(frozen=True)
class Provenance:
    kind: str = ORIGINAL
    parent_thread_id: str | None = None
    fold_index: int | None = None

    def __post_init__(self):
        if self.kind not in (ORIGINAL, AUGMENTED):
            raise ValueError(f"unknown provenance kind {self.kind!r}")
        if self.kind == AUGMENTED and (self.parent_thread_id is None or self.fold_index is None):
            raise ValueError("augmented provenance needs parent_thread_id and fold_index")

    @property
    def is_original(self) -> bool:
        return self.kind == ORIGINAL


@dataclass(frozen=True)
class Thread:
    """Source tweet plus replies, canonically ordered.

    Order: source first, then replies by created_at ascending, ties broken
    by tweet id ascending. Construct through `Thread.build`, which sorts
    and enforces the tree invariants.
    """

    thread_id: str
    event: str
    label: Label
    tweets: tuple[Tweet, ...]
    provenance: Provenance = Provenance()

    @staticmethod
    def build(thread_id, event, label, tweets, provenance=Provenance()) -> "Thread":
        tweets = list(tweets)
        if not tweets:
            raise ThreadStructureError(f"thread {thread_id}: no tweets")
        roots = [t for t in tweets if t.parent_id is None]
        if len(roots) != 1:
            ids = [t.id for t in roots]
            raise ThreadStructureError(f"thread {thread_id}: expected one source tweet, got {ids}")
        source = roots[0]
        replies = sorted((t for t in tweets if t.parent_id is not None), key=lambda t: (t.created_at, t.id))
        ordered = [source] + replies
        by_id = {}
        for t in ordered:
            if t.id in by_id:
                raise ThreadStructureError(f"thread {thread_id}: duplicate tweet id {t.id}")
            by_id[t.id] = t
        reaches_source: dict[int, bool] = {source.id: True}
        for t in replies:
            parent = by_id.get(t.parent_id)
            if parent is None:
                raise ThreadStructureError(f"thread {thread_id}: tweet {t.id} replies to missing tweet {t.parent_id}")
            if parent.created_at > t.created_at:
                raise ThreadStructureError(f"thread {thread_id}: tweet {t.id} predates its parent {parent.id}")
            # Chase parent links to the source; a cycle never reaches it.
            chain = []
            node = t
            while node.id not in reaches_source:
                chain.append(node.id)
                if len(chain) > len(ordered):
                    raise ThreadStructureError(f"thread {thread_id}: reply cycle at tweet {t.id}")
                node = by_id[node.parent_id]
            for tid in chain:
                reaches_source[tid] = True
        return Thread(thread_id, event, label, tuple(ordered), provenance)

    @property
    def source(self) -> Tweet:
        return self.tweets[0]

    def __len__(self) -> int:
        return len(self.tweets)


@dataclass(frozen=True)
class AdjacencyStructure:
    """Directed top-down propagation tree over a thread's tweets.

    Node i corresponds to tweets[i] (node 0 = source); edges run
    parent -> child only, so there are exactly n - 1 of them.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    node_ids: tuple[int, ...]


def build_propagation_graph(thread: Thread) -> AdjacencyStructure:
    index = {t.id: i for i, t in enumerate(thread.tweets)}
    edges = []
    for i, t in enumerate(thread.tweets[1:], start=1):
        p = index.get(t.parent_id)
        if p is None:
            raise ThreadStructureError(f"thread {thread.thread_id}: tweet {t.id} replies to missing tweet {t.parent_id}")
        edges.append((p, i))
    return AdjacencyStructure(len(thread.tweets), tuple(edges), tuple(t.id for t in thread.tweets))


@dataclass
class Dataset:
    scheme: str
    events: dict[str, list[Thread]] = field(default_factory=dict)

    def all_threads(self):
        for event in self.events.values():
            yield from event

    def thread_count(self) -> int:
        return sum(len(v) for v in self.events.values())

    def label_counts(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for event, threads in self.events.items():
            counts = {value: 0 for value in SCHEME_VALUES[self.scheme]}
            for t in threads:
                counts[t.label.value] += 1
            out[event] = counts
        return out


# ---------------------------------------------------------------------------
# Validation


@dataclass
class ValidationReport:
    counts: dict[str, dict[str, int]]
    violations: list[str]
    duplicate_thread_ids: list[str]
    default_profile_tweets: int

    def ok(self) -> bool:
        return not self.violations and not self.duplicate_thread_ids

    def render_text(self) -> str:
        lines = []
        for event in sorted(self.counts):
            parts = ", ".join(f"{value}={n}" for value, n in self.counts[event].items())
            lines.append(f"{event}: {parts}")
        if self.duplicate_thread_ids:
            lines.append("duplicate thread ids: " + ", ".join(self.duplicate_thread_ids))
        for v in self.violations:
            lines.append("violation: " + v)
        lines.append(f"tweets with all-default user profile: {self.default_profile_tweets}")
        return "\n".join(lines)


def validate_dataset(dataset: Dataset) -> ValidationReport:
    """Pure structural audit: per-event label counts, invariant breaks, duplicates."""
    counts = dataset.label_counts()
    violations: list[str] = []
    duplicates: list[str] = []
    seen: set[str] = set()
    default_profiles = 0
    for event, threads in dataset.events.items():
        for t in threads:
            if t.thread_id in seen:
                duplicates.append(t.thread_id)
            seen.add(t.thread_id)
            if t.event != event:
                violations.append(f"thread {t.thread_id}: bucketed under {event!r} but tagged {t.event!r}")
            if t.label.scheme != dataset.scheme:
                violations.append(f"thread {t.thread_id}: label scheme {t.label.scheme!r} != dataset {dataset.scheme!r}")
            try:
                Thread.build(t.thread_id, t.event, t.label, t.tweets, t.provenance)
            except ThreadStructureError as exc:
                violations.append(str(exc))
            default_profiles += sum(1 for tw in t.tweets if tw.user.is_default())
    return ValidationReport(counts, violations, duplicates, default_profiles)


# ---------------------------------------------------------------------------
# PHEME-style archive ingestion
#
# Layout:  <root>/<event>/<thread_id>/source-tweets/<thread_id>.json
#                                     reactions/<tweet_id>.json   (0..n)
#                                     structure.json               (nested id dict)
#                                     annotation.json              (is_rumour / veracity)
# Reaction records not referenced by structure.json are ignored; structure
# entries without a record make the thread dangling and skip it.

_TWITTER_TIME = "%a %b %d %H:%M:%S %z %Y"


def parse_timestamp(value) -> int:
    if isinstance(value, bool):
        raise ValueError(f"bad timestamp {value!r}")
    if isinstance(value, (int, float)):
        return int(value)
    if isinstance(value, str):
        try:
            return int(datetime.strptime(value, _TWITTER_TIME).timestamp())
        except ValueError:
            pass
        try:
            dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
        except ValueError:
            raise ValueError(f"bad timestamp {value!r}")
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return int(dt.timestamp())
    raise ValueError(f"bad timestamp {value!r}")


class _SkipThread(Exception):
    pass


@dataclass(frozen=True)
class SkipRecord:
    thread_dir: str
    reason: str


@dataclass
class IngestResult:
    dataset: Dataset
    skipped: list[SkipRecord]


def _load_json(path: Path):
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise _SkipThread(f"missing record {path.name}")
    except OSError as exc:
        raise IngestError(f"unreadable file {path}: {exc}")
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise _SkipThread(f"malformed record {path.name}: {exc}")


def _parse_user(record: dict) -> UserProfile:
    user = record.get("user") or {}
    return UserProfile(
        tweet_count=max(0, int(user.get("statuses_count") or 0)),
        listed_count=max(0, int(user.get("listed_count") or 0)),
        followers=max(0, int(user.get("followers_count") or 0)),
        following=max(0, int(user.get("friends_count") or 0)),
        verified=bool(user.get("verified", False)),
    )


def _parse_tweet(record: dict, parent_id: int | None) -> Tweet:
    try:
        tweet_id = int(record["id"])
        text = str(record.get("text") or "")
        created = parse_timestamp(record["created_at"])
        user = _parse_user(record)
    except (KeyError, TypeError, ValueError) as exc:
        raise _SkipThread(f"malformed tweet record: {exc}")
    return Tweet(tweet_id, text, created, parent_id, user)


def _parse_label(annotation: dict, scheme: str) -> Label:
    if scheme == BINARY:
        raw = annotation.get("is_rumour")
        mapping = {"rumour": "rumour", "nonrumour": "non_rumour"}
    else:
        raw = annotation.get("veracity")
        mapping = {"true": "true", "false": "false", "unverified": "unverified"}
    if raw is None:
        raise _SkipThread(f"no annotation for scheme {scheme!r}")
    value = mapping.get(str(raw))
    if value is None:
        raise _SkipThread(f"unknown label {raw!r} for scheme {scheme!r}")
    return Label(scheme, value)


def _structure_edges(structure, thread_dir: str) -> list[tuple[int, int | None]]:
    """Flatten the nested structure dict to (id, parent_id) pairs."""
    if not isinstance(structure, dict) or len(structure) != 1:
        raise _SkipThread("structure record must have exactly one root")
    out: list[tuple[int, int | None]] = []
    seen: set[int] = set()

    def walk(node_id: str, children, parent: int | None, depth: int):
        if depth > 10_000:
            raise _SkipThread("structure nesting too deep")
        try:
            tid = int(node_id)
        except ValueError:
            raise _SkipThread(f"non-numeric id {node_id!r} in structure")
        if tid in seen:
            raise _SkipThread(f"tweet {tid} appears twice in structure")
        seen.add(tid)
        out.append((tid, parent))
        if isinstance(children, dict):
            for child_id, grand in children.items():
                walk(child_id, grand, tid, depth + 1)
        elif children in ([], None):
            pass
        else:
            raise _SkipThread(f"bad structure value under {node_id!r}")

    root_id, root_children = next(iter(structure.items()))
    walk(root_id, root_children, None, 0)
    return out


def _ingest_thread(thread_dir: Path, event: str, scheme: str) -> Thread:
    annotation = _load_json(thread_dir / "annotation.json")
    if not isinstance(annotation, dict):
        raise _SkipThread("annotation record is not an object")
    label = _parse_label(annotation, scheme)
    structure = _load_json(thread_dir / "structure.json")
    pairs = _structure_edges(structure, thread_dir.name)

    records: dict[int, dict] = {}
    for sub in ("source-tweets", "reactions"):
        folder = thread_dir / sub
        if not folder.is_dir():
            continue
        for name in sorted(os.listdir(folder)):
            if not name.endswith(".json"):
                continue
            rec = _load_json(folder / name)
            if not isinstance(rec, dict) or "id" not in rec:
                raise _SkipThread(f"malformed record {name}: not a tweet object")
            try:
                records[int(rec["id"])] = rec
            except (TypeError, ValueError):
                raise _SkipThread(f"malformed record {name}: bad id {rec.get('id')!r}")

    tweets = []
    for tid, parent in pairs:
        rec = records.get(tid)
        if rec is None:
            raise _SkipThread(f"structure references tweet {tid} with no record")
        tweets.append(_parse_tweet(rec, parent))
    try:
        return Thread.build(thread_dir.name, event, label, tweets)
    except ThreadStructureError as exc:
        raise _SkipThread(str(exc))


def ingest_pheme(root_dir, scheme: str) -> IngestResult:
    """Ingest a PHEME-style archive into a Dataset.

    Threads that cannot be represented faithfully (missing/unknown
    annotation, malformed or dangling structure, broken tweet records) are
    skipped and reported; unreadable files abort with the path.
    """
    if scheme not in SCHEME_VALUES:
        raise ValueError(f"unknown label scheme {scheme!r}")
    root = Path(root_dir)
    dataset = Dataset(scheme=scheme)
    skipped: list[SkipRecord] = []
    if not root.is_dir():
        raise IngestError(f"archive root {root} is not a directory")
    for event_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        threads: list[Thread] = []
        for thread_dir in sorted(p for p in event_dir.iterdir() if p.is_dir()):
            try:
                threads.append(_ingest_thread(thread_dir, event_dir.name, scheme))
            except _SkipThread as exc:
                skipped.append(SkipRecord(str(thread_dir), str(exc)))
        if threads:
            dataset.events[event_dir.name] = threads
    return IngestResult(dataset, skipped)


# ---------------------------------------------------------------------------
# Canonical threads.jsonl


def thread_to_record(thread: Thread) -> dict:
    return {
        "thread_id": thread.thread_id,
        "event": thread.event,
        "scheme": thread.label.scheme,
        "label": thread.label.value,
        "provenance": {
            "kind": thread.provenance.kind,
            "parent_thread_id": thread.provenance.parent_thread_id,
            "fold_index": thread.provenance.fold_index,
        },
        "tweets": [
            {
                "id": t.id,
                "text": t.text,
                "created_at": t.created_at,
                "parent_id": t.parent_id,
                "user": {
                    "tweet_count": t.user.tweet_count,
                    "listed_count": t.user.listed_count,
                    "followers": t.user.followers,
                    "following": t.user.following,
                    "verified": t.user.verified,
                },
            }
            for t in thread.tweets
        ],
    }


def thread_from_record(record: dict) -> Thread:
    label = Label(record["scheme"], record["label"])
    prov = record.get("provenance") or {}
    provenance = Provenance(
        kind=prov.get("kind", ORIGINAL),
        parent_thread_id=prov.get("parent_thread_id"),
        fold_index=prov.get("fold_index"),
    )
    tweets = [
        Tweet(
            id=int(t["id"]),
            text=t["text"],
            created_at=int(t["created_at"]),
            parent_id=None if t["parent_id"] is None else int(t["parent_id"]),
            user=UserProfile(
                tweet_count=t["user"]["tweet_count"],
                listed_count=t["user"]["listed_count"],
                followers=t["user"]["followers"],
                following=t["user"]["following"],
                verified=t["user"]["verified"],
            ),
        )
        for t in record["tweets"]
    ]
    return Thread.build(record["thread_id"], record["event"], label, tweets, provenance)


def dumps_dataset(dataset: Dataset) -> str:
    """Canonical jsonl text: events sorted by name, stable field order."""
    lines = []
    for event in sorted(dataset.events):
        for thread in dataset.events[event]:
            lines.append(json.dumps(thread_to_record(thread), ensure_ascii=False, separators=(",", ":")))
    return "\n".join(lines) + ("\n" if lines else "")


def write_threads_jsonl(dataset: Dataset, path) -> None:
    Path(path).write_text(dumps_dataset(dataset), encoding="utf-8")


def read_threads_jsonl(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    dataset: Dataset | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            thread = thread_from_record(record)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, ThreadStructureError) as exc:
            raise DataError(f"{path}:{lineno}: bad thread record: {exc}")
        if dataset is None:
            dataset = Dataset(scheme=thread.label.scheme)
        elif thread.label.scheme != dataset.scheme:
            raise DataError(f"{path}:{lineno}: mixed label schemes")
        dataset.events.setdefault(thread.event, []).append(thread)
    if dataset is None:
        raise DataError(f"{path}: no thread records")
    return dataset
