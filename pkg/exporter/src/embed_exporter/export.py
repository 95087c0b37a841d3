"""Embedding and substitution-candidate export from a masked language model.

The exporter reads a threads.jsonl file, normalizes every tweet text,
deduplicates by text key, and writes two artifacts:

  * an EMB1 table with one pooled-hidden-state vector per distinct text;
  * a CND1 table with ranked substitute tokens for every non-keyword
    token position, obtained by masking that position and ranking the
    model's vocabulary predictions.

Inference is batched; output records are sorted by key, so a given
(threads file, model, options) triple always produces identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .formats import write_cnd1, write_emb1
from .hashing import text_key
from .normalize import (MENTION_PLACEHOLDER, URL_PLACEHOLDER, AliasTable,
                        PreprocessedText, is_keyword, normalize_tweet)

MEAN_POOLING = "mean"
FIRST_TOKEN_POOLING = "first"


class ExportError(Exception):
    """Bad input file, unloadable model, or an unusable export request."""


@dataclass(frozen=True)
class ExportJob:
    """One export run: where to read, what to write, which model to use."""

    threads_file: str
    emb_out: str
    cand_out: str
    model_name: str
    top_k: int = 10
    batch_size: int = 32
    pooling: str = MEAN_POOLING

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.pooling not in (MEAN_POOLING, FIRST_TOKEN_POOLING):
            raise ValueError(f"unknown pooling {self.pooling!r}")


def read_thread_texts(path) -> list[str]:
    """All tweet texts from a threads.jsonl file, in file order."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"threads file {path} not found")
    texts: list[str] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            for tweet in record["tweets"]:
                texts.append(str(tweet["text"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ExportError(f"{path}:{lineno}: bad thread record: {exc}")
    if not texts:
        raise ExportError(f"{path}: no tweet texts")
    return texts


def distinct_texts(texts, alias_table: AliasTable | None = None) -> dict[int, PreprocessedText]:
    """Normalize and deduplicate by text key, keeping first-seen order."""
    out: dict[int, PreprocessedText] = {}
    for text in texts:
        pre = normalize_tweet(text, alias_table)
        key = text_key(pre.tokens)
        if key not in out:
            out[key] = pre
    return out


def load_model(name_or_path: str):
    """Load tokenizer and masked-LM weights; wrap failures in ExportError."""
    import torch
    from transformers import AutoModelForMaskedLM, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(name_or_path)
        model = AutoModelForMaskedLM.from_pretrained(name_or_path)
    except Exception as exc:
        raise ExportError(f"cannot load model {name_or_path!r}: {exc}")
    model.eval()
    torch.set_grad_enabled(False)
    return tokenizer, model


def hidden_width(model) -> int:
    return int(model.config.hidden_size)


def _forward_batches(tokenizer, model, texts: list[str], batch_size: int):
    """Yield (encoding, model output) per batch, with hidden states."""
    import torch

    for start in range(0, len(texts), batch_size):
        batch = texts[start:start + batch_size]
        enc = tokenizer(batch, padding=True, truncation=True, return_tensors="pt")
        with torch.no_grad():
            out = model(**enc, output_hidden_states=True)
        yield enc, out


def embed_distinct(tokenizer, model, pres: dict[int, PreprocessedText],
                   batch_size: int, pooling: str) -> dict[int, np.ndarray]:
    """Pooled final-layer vector per distinct text, float32.

    Mean pooling averages final hidden states over attention-mask
    positions (special tokens included); first-token pooling takes the
    leading position's state.
    """
    keys = list(pres)
    joined = [pres[k].joined for k in keys]
    vectors: dict[int, np.ndarray] = {}
    done = 0
    for enc, out in _forward_batches(tokenizer, model, joined, batch_size):
        states = out.hidden_states[-1]
        if pooling == FIRST_TOKEN_POOLING:
            pooled = states[:, 0, :]
        else:
            mask = enc["attention_mask"].unsqueeze(-1).to(states.dtype)
            pooled = (states * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1.0)
        arr = pooled.cpu().numpy().astype(np.float32)
        for row in range(arr.shape[0]):
            vectors[keys[done]] = arr[row].copy()
            done += 1
    return vectors


def _banned_candidate(candidate: str, original: str, special_tokens: frozenset[str]) -> bool:
    """Filter junk predictions: specials, subword pieces, punctuation-only
    strings, placeholder/alias keywords, and the original token itself."""
    if not candidate or candidate in special_tokens:
        return True
    if candidate.startswith("##"):
        return True
    if candidate.startswith("[") and candidate.endswith("]"):
        return True
    if not any(ch.isalnum() for ch in candidate):
        return True
    if candidate.lower() == original.lower():
        return True
    if candidate.upper() in (URL_PLACEHOLDER, MENTION_PLACEHOLDER):
        return True
    if is_keyword(candidate) or is_keyword(candidate.lower()):
        return True
    return False


def rank_candidates(tokenizer, model, pres: dict[int, PreprocessedText],
                    top_k: int, batch_size: int) -> dict[tuple[int, int], tuple[str, ...]]:
    """Ranked substitutes per (text key, non-keyword token index).

    Each query masks one whole token of the normalized text. Predictions
    are scanned in descending score order, junk is filtered, and up to
    top_k survivors are kept. Positions with no survivors, and positions
    whose mask fell past the model's length limit, produce no record.
    """
    import torch

    queries: list[tuple[int, int, str]] = []
    texts: list[str] = []
    for key, pre in pres.items():
        for idx, (token, kw) in enumerate(zip(pre.tokens, pre.keyword_mask)):
            if kw:
                continue
            masked = list(pre.tokens)
            masked[idx] = tokenizer.mask_token
            queries.append((key, idx, token))
            texts.append(" ".join(masked))

    entries: dict[tuple[int, int], tuple[str, ...]] = {}
    special_tokens = frozenset(tokenizer.all_special_tokens)
    mask_id = tokenizer.mask_token_id
    done = 0
    for enc, out in _forward_batches(tokenizer, model, texts, batch_size):
        logits = out.logits
        input_ids = enc["input_ids"]
        for row in range(input_ids.shape[0]):
            key, idx, original = queries[done]
            done += 1
            positions = (input_ids[row] == mask_id).nonzero(as_tuple=True)[0]
            if positions.numel() == 0:
                continue
            ranked = torch.argsort(logits[row, positions[0].item()], descending=True)
            kept: list[str] = []
            for token_id in ranked.tolist():
                candidate = tokenizer.convert_ids_to_tokens(token_id)
                if _banned_candidate(candidate, original, special_tokens):
                    continue
                kept.append(candidate)
                if len(kept) == top_k:
                    break
            if kept:
                entries[(key, idx)] = tuple(kept)
    return entries


def run_export(job: ExportJob, alias_table: AliasTable | None = None) -> dict:
    """Execute an export job end to end; returns summary counts."""
    texts = read_thread_texts(job.threads_file)
    pres = distinct_texts(texts, alias_table)
    tokenizer, model = load_model(job.model_name)
    dim = hidden_width(model)
    vectors = embed_distinct(tokenizer, model, pres, job.batch_size, job.pooling)
    write_emb1(job.emb_out, dim, vectors.items())
    entries = rank_candidates(tokenizer, model, pres, job.top_k, job.batch_size)
    write_cnd1(job.cand_out, entries)
    return {
        "texts": len(texts),
        "distinct": len(pres),
        "dim": dim,
        "embeddings": len(vectors),
        "candidate_records": len(entries),
    }
