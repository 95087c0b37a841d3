"""Offline exporter for tweet embeddings and substitution candidates.

Reads a threads.jsonl file, runs a masked language model over every
distinct normalized tweet text, and writes EMB1 (pooled embeddings) and
CND1 (ranked substitute tokens) tables keyed by the FNV-1a text hash.
"""

__version__ = "0.1.0"

from .export import (ExportError, ExportJob, distinct_texts, embed_distinct,
                     load_model, rank_candidates, read_thread_texts, run_export)
from .formats import FormatError, read_cnd1, read_emb1, write_cnd1, write_emb1
from .hashing import fnv1a64, text_key
from .normalize import (AliasTable, PreprocessedText, default_alias_table,
                        is_keyword, normalize_tweet, parse_alias_table)

__all__ = [
    "AliasTable",
    "ExportError",
    "ExportJob",
    "FormatError",
    "PreprocessedText",
    "default_alias_table",
    "distinct_texts",
    "embed_distinct",
    "fnv1a64",
    "is_keyword",
    "load_model",
    "normalize_tweet",
    "parse_alias_table",
    "rank_candidates",
    "read_cnd1",
    "read_emb1",
    "read_thread_texts",
    "run_export",
    "text_key",
    "write_cnd1",
    "write_emb1",
]
