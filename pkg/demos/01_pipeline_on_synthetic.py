"""
From raw threads to a validated canonical file
==============================================

Builds a small synthetic thread collection, writes it to the canonical
threads.jsonl interchange format, reads it back, and audits it. This is
the same path the `threadforge ingest` / `threadforge validate` commands
take, minus the on-disk archive crawling.
"""

from pathlib import Path
from tempfile import TemporaryDirectory

# a synthetic stand-in for an ingested archive: 4 events, binary labels
from threadforge.synth import make_separable

dataset = make_separable(n_threads=40, n_events=4, seed=0)
print(f"events: {sorted(dataset.events)}")
print(f"threads: {dataset.thread_count()}")

# each thread is a source tweet plus replies forming a tree
first = next(dataset.all_threads())
print(f"\nfirst thread {first.thread_id!r} ({first.label.value}):")
for t in first.tweets:
    parent = f"-> {t.parent_id}" if t.parent_id is not None else "(source)"
    print(f"  [{t.id}] {parent} {t.text[:50]}")

# the propagation graph: node 0 is the source, edges run parent -> child
from threadforge.data import build_propagation_graph

graph = build_propagation_graph(first)
print(f"\npropagation graph: n={graph.n}, edges={graph.edges}")

# round-trip through the canonical jsonl format; writing is deterministic,
# so the same dataset always produces the same bytes
from threadforge.data import read_threads_jsonl, write_threads_jsonl

with TemporaryDirectory() as tmp:
    path = Path(tmp) / "threads.jsonl"
    write_threads_jsonl(dataset, path)
    again = read_threads_jsonl(path)
    print(f"\nround trip equal: {again == dataset}")
    print(f"file size: {path.stat().st_size} bytes")

# the validation report counts labels per event and flags structural damage
from threadforge.data import validate_dataset

report = validate_dataset(dataset)
print("\nvalidation report:")
print(report.render_text())
print(f"ok: {report.ok()}")
