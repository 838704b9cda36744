"""Desk-scale fixtures: a tiny 768-wide encoder built locally and a keyword-
separable transcript corpus.

No pretrained weights are downloadable here, so the encoder starts from a
random init saved through save_pretrained; the loading path in the package
is exactly the one a real pretrained identifier would take.
"""

import json
import os

import pytest
import torch
from transformers import BertConfig, BertForSequenceClassification, BertTokenizerFast

CLASS_WORDS = {
    "happiness": ["joy", "glee", "smile", "delight"],
    "sadness": ["tears", "gloom", "sorrow", "mourning"],
    "surprise": ["shock", "gasp", "startle", "wonder"],
    "anger": ["rage", "scowl", "fury", "spite"],
    "other": ["table", "chair", "window", "ledger"],
}
FILLER = ["the", "a", "is", "was", "very", "today", "it", "and"]


def make_rows(n_per_class, seed=0):
    import numpy as np

    rng = np.random.default_rng(seed)
    rows = []
    for raw_label, words in CLASS_WORDS.items():
        for i in range(n_per_class):
            n_class_words = int(rng.integers(3, 6))
            chosen = [words[int(k)] for k in rng.integers(0, len(words), n_class_words)]
            fillers = [FILLER[int(k)] for k in rng.integers(0, len(FILLER), 2)]
            text = " ".join(fillers[:1] + chosen + fillers[1:])
            rows.append({
                "utt_id": f"{raw_label}_{i:03d}",
                "corpus": "DailyDialog",
                "raw_label": raw_label,
                "transcript": text,
            })
    return rows


def write_manifest(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    directory = str(tmp_path_factory.mktemp("tiny-encoder"))
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    for words in CLASS_WORDS.values():
        vocab += words
    vocab += FILLER
    vocab_path = os.path.join(directory, "vocab.txt")
    with open(vocab_path, "w", encoding="utf-8") as f:
        f.write("\n".join(vocab))

    torch.manual_seed(0)
    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=768,        # the export dim contract
        num_hidden_layers=2,
        num_attention_heads=4,
        intermediate_size=256,
        max_position_embeddings=64,
        num_labels=5,
    )
    model = BertForSequenceClassification(config)
    model.save_pretrained(directory)
    # transformers >= 5 renamed the first parameter to `vocab`; pass it
    # positionally so both 4.x (vocab_file) and 5.x (vocab) accept the path
    tokenizer = BertTokenizerFast(vocab_path, do_lower_case=True)
    assert tokenizer.vocab_size == len(vocab), "tokenizer dropped vocabulary entries"
    tokenizer.save_pretrained(directory)
    return directory


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory):
    directory = tmp_path_factory.mktemp("toy-corpus")
    path = str(directory / "manifest.jsonl")
    write_manifest(path, make_rows(n_per_class=30, seed=1))
    return path
