"""Shared fixtures: a tiny offline BERT and a small threads.jsonl file."""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from exporter_helpers import VOCAB, thread_record, write_threads


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """Randomly initialized BertForMaskedLM plus WordPiece tokenizer on disk."""
    import torch
    from transformers import BertConfig, BertForMaskedLM, BertTokenizer

    path = tmp_path_factory.mktemp("tinybert")
    vocab = {token: i for i, token in enumerate(VOCAB)}
    tokenizer = BertTokenizer(vocab=vocab, do_lower_case=True, model_max_length=64)
    tokenizer.save_pretrained(path)
    torch.manual_seed(20260814)
    config = BertConfig(
        vocab_size=len(VOCAB),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=128,
    )
    BertForMaskedLM(config).save_pretrained(path)
    return str(path)


@pytest.fixture()
def threads_file(tmp_path):
    """Five texts across two threads; two are duplicates after normalization."""
    records = [
        thread_record("t1", "stormcity", "rumour", [
            "the earth is flat",
            "breaking news: the city is on fire http://x.co/a1 \U0001F525",
            "fake story says the earth is flat",
        ]),
        thread_record("t2", "stormcity", "non_rumour", [
            "the earth is flat",
            "official report published today @mayor",
        ]),
    ]
    path = tmp_path / "threads.jsonl"
    write_threads(path, records)
    return path
