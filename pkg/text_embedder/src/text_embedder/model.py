"""Encoder fine-tuning on canonical emotion classes and [CLS] export.

The pretrained identifier (a hub name like the uncased 12x768 base model, or
any local directory usable with from_pretrained) supplies both the encoder
and its tokenizer.  Fine-tuning is cross-entropy with Adam, gradient-norm
clipping and a fixed epoch count; the log records per-epoch loss, held-out
macro F1 and an exact echo of the configuration.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np
import torch
from sklearn.metrics import f1_score
from transformers import AutoModelForSequenceClassification, AutoTokenizer

from .config import TextFinetuneConfig
from .data import DataError, TextRecord, split_heldout
from .labels import CANONICAL_CLASSES

LABELS_FILE = "label_classes.json"
LOG_FILE = "training_log.json"


class TrainingError(Exception):
    pass


def _encode(tokenizer, records, max_seq_len):
    return tokenizer(
        [r.transcript for r in records],
        padding="max_length",
        truncation=True,
        max_length=max_seq_len,
        return_tensors="pt",
    )


def _batches(n, batch_size, generator):
    order = torch.randperm(n, generator=generator).tolist()
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def finetune_text_model(records: "list[TextRecord]", cfg: TextFinetuneConfig,
                        out_dir: str):
    """Fine-tune the encoder on canonical labels; save model + tokenizer + log.

    Returns (model, tokenizer, log dict).
    """
    if not records:
        raise TrainingError("empty manifest")
    bad = sorted({r.label for r in records} - set(CANONICAL_CLASSES))
    if bad:
        raise TrainingError(f"labels outside the canonical classes: {bad}")

    torch.manual_seed(cfg.seed)
    tokenizer = AutoTokenizer.from_pretrained(cfg.pretrained_model)
    model = AutoModelForSequenceClassification.from_pretrained(
        cfg.pretrained_model, num_labels=len(CANONICAL_CLASSES)
    )
    model.train()

    label_index = {c: i for i, c in enumerate(CANONICAL_CLASSES)}
    train, dev = split_heldout(records, cfg.dev_fraction, cfg.seed)

    enc = _encode(tokenizer, train, cfg.max_seq_len)
    labels = torch.tensor([label_index[r.label] for r in train])
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                                 eps=cfg.adam_epsilon)
    generator = torch.Generator().manual_seed(cfg.seed)

    log = {
        "config": dataclasses.asdict(cfg),
        "classes": list(CANONICAL_CLASSES),
        "n_train": len(train),
        "n_dev": len(dev),
        "epoch_losses": [],
        "dev_macro_f1": [],
    }
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for idx in _batches(len(train), cfg.batch_size, generator):
            optimizer.zero_grad()
            out = model(
                input_ids=enc["input_ids"][idx],
                attention_mask=enc["attention_mask"][idx],
                labels=labels[idx],
            )
            out.loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip_norm)
            optimizer.step()
            total += out.loss.detach().item() * len(idx)
            count += len(idx)
        log["epoch_losses"].append(total / count)
        log["dev_macro_f1"].append(evaluate_macro_f1(model, tokenizer, dev, cfg))
        model.train()

    os.makedirs(out_dir, exist_ok=True)
    model.save_pretrained(out_dir)
    tokenizer.save_pretrained(out_dir)
    with open(os.path.join(out_dir, LABELS_FILE), "w", encoding="utf-8") as f:
        json.dump(list(CANONICAL_CLASSES), f)
    with open(os.path.join(out_dir, LOG_FILE), "w", encoding="utf-8") as f:
        json.dump(log, f, indent=2, sort_keys=True)
    return model, tokenizer, log


def evaluate_macro_f1(model, tokenizer, records, cfg: TextFinetuneConfig) -> float:
    if not records:
        raise DataError("no held-out records to evaluate")
    label_index = {c: i for i, c in enumerate(CANONICAL_CLASSES)}
    enc = _encode(tokenizer, records, cfg.max_seq_len)
    golds = [label_index[r.label] for r in records]
    model.eval()
    preds = []
    with torch.no_grad():
        for i in range(0, len(records), cfg.batch_size):
            out = model(
                input_ids=enc["input_ids"][i : i + cfg.batch_size],
                attention_mask=enc["attention_mask"][i : i + cfg.batch_size],
            )
            preds.extend(out.logits.argmax(dim=1).tolist())
    return float(f1_score(golds, preds, average="macro",
                          labels=list(range(len(CANONICAL_CLASSES))),
                          zero_division=0))


def majority_baseline_macro_f1(records) -> float:
    """Macro F1 of always predicting the most frequent label, from counts alone."""
    counts: "dict[str, int]" = {}
    for r in records:
        counts[r.label] = counts.get(r.label, 0) + 1
    majority = max(counts, key=counts.get)
    n = len(records)
    precision = counts[majority] / n
    f1_major = 2 * precision * 1.0 / (precision + 1.0)
    return f1_major / len(CANONICAL_CLASSES)


def load_finetuned(model_dir: str):
    tokenizer = AutoTokenizer.from_pretrained(model_dir)
    model = AutoModelForSequenceClassification.from_pretrained(model_dir)
    model.eval()
    return model, tokenizer


def export_text_embeddings(model, tokenizer, records: "list[TextRecord]",
                           cfg: TextFinetuneConfig | None = None) -> "list[tuple[str, np.ndarray]]":
    """Final-layer [CLS] vector per utterance, in manifest order.

    Fixed-length padding keeps a transcript's vector independent of which
    batch it lands in, so identical transcripts give identical vectors.
    """
    cfg = cfg or TextFinetuneConfig()
    if not records:
        raise DataError("nothing to export")
    enc = _encode(tokenizer, records, cfg.max_seq_len)
    model.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(records), cfg.batch_size):
            result = model(
                input_ids=enc["input_ids"][i : i + cfg.batch_size],
                attention_mask=enc["attention_mask"][i : i + cfg.batch_size],
                output_hidden_states=True,
            )
            cls = result.hidden_states[-1][:, 0, :].cpu().numpy().astype(np.float32)
            for j, rec in enumerate(records[i : i + cfg.batch_size]):
                out.append((rec.utt_id, cls[j]))
    return out
