"""Manifest ingestion: the same JSONL rows the audio pipeline reads.

Only utt_id, corpus, raw_label and transcript matter here; other fields
(audio paths, sessions, speakers) pass through untouched so one manifest
file can serve both components.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .labels import ExcludedLabelError, canonicalize


class DataError(Exception):
    pass


@dataclass
class TextRecord:
    utt_id: str
    transcript: str
    label: str  # canonical


def read_manifest(path: str, require_label: bool = True) -> "list[TextRecord]":
    """Load transcript records, applying the canonical grouping.

    Rows whose label is excluded (IEMOCAP 'xxx') are dropped; a missing
    transcript is an error naming the utterance.
    """
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            for key in ("utt_id", "corpus", "raw_label"):
                if not row.get(key):
                    raise DataError(f"{path}:{lineno}: missing required field {key!r}")
            utt_id = str(row["utt_id"])
            if utt_id in seen:
                raise DataError(f"{path}:{lineno}: duplicate utt_id {utt_id!r}")
            seen.add(utt_id)
            transcript = row.get("transcript")
            if not transcript:
                raise DataError(f"{path}:{lineno}: record {utt_id!r} has no transcript")
            if require_label:
                try:
                    label = canonicalize(row["corpus"], row["raw_label"])
                except ExcludedLabelError:
                    continue
            else:
                label = ""
            records.append(TextRecord(utt_id=utt_id, transcript=str(transcript), label=label))
    if not records:
        raise DataError(f"{path}: no usable records")
    return records


def split_heldout(records: "list[TextRecord]", fraction: float, seed: int):
    """Seeded shuffle split; the held-out side gets at least one record."""
    import numpy as np

    order = np.random.default_rng(seed).permutation(len(records))
    n_dev = max(1, int(round(fraction * len(records))))
    if n_dev >= len(records):
        raise DataError(f"cannot hold out {n_dev} of {len(records)} records")
    dev_idx = set(order[:n_dev].tolist())
    train = [r for i, r in enumerate(records) if i not in dev_idx]
    dev = [r for i, r in enumerate(records) if i in dev_idx]
    return train, dev
