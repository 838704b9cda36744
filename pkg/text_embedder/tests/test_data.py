"""Manifest reading on the text side: same JSONL rows as the audio pipeline."""

import json

import pytest

from text_embedder.data import DataError, read_manifest, split_heldout


def write(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")


def test_reads_and_groups(tmp_path):
    path = str(tmp_path / "m.jsonl")
    write(path, [
        {"utt_id": "a", "corpus": "DailyDialog", "raw_label": "surprise",
         "transcript": "what a shock"},
        {"utt_id": "b", "corpus": "DailyDialog", "raw_label": "other",
         "transcript": "the table", "audio_path": "ignored.wav", "session": 3},
    ])
    records = read_manifest(path)
    assert [r.label for r in records] == ["Fear/Surprise", "Neutral"]


def test_xxx_rows_dropped(tmp_path):
    path = str(tmp_path / "m.jsonl")
    write(path, [
        {"utt_id": "a", "corpus": "IEMOCAP", "raw_label": "xxx", "transcript": "t",
         "session": 1},
        {"utt_id": "b", "corpus": "IEMOCAP", "raw_label": "Anger", "transcript": "t",
         "session": 1},
    ])
    records = read_manifest(path)
    assert [r.utt_id for r in records] == ["b"]


def test_missing_transcript_named(tmp_path):
    path = str(tmp_path / "m.jsonl")
    write(path, [{"utt_id": "naked", "corpus": "DailyDialog", "raw_label": "other"}])
    with pytest.raises(DataError, match="naked"):
        read_manifest(path)


def test_duplicate_id(tmp_path):
    path = str(tmp_path / "m.jsonl")
    row = {"utt_id": "a", "corpus": "DailyDialog", "raw_label": "other", "transcript": "t"}
    write(path, [row, row])
    with pytest.raises(DataError, match="duplicate"):
        read_manifest(path)


def test_empty_manifest(tmp_path):
    path = str(tmp_path / "m.jsonl")
    write(path, [])
    with pytest.raises(DataError, match="no usable"):
        read_manifest(path)


def test_split_heldout_deterministic(tmp_path):
    path = str(tmp_path / "m.jsonl")
    write(path, [
        {"utt_id": f"u{i}", "corpus": "DailyDialog", "raw_label": "other",
         "transcript": f"text {i}"}
        for i in range(20)
    ])
    records = read_manifest(path)
    train_a, dev_a = split_heldout(records, 0.25, seed=3)
    train_b, dev_b = split_heldout(records, 0.25, seed=3)
    assert [r.utt_id for r in dev_a] == [r.utt_id for r in dev_b]
    assert len(dev_a) == 5
    assert {r.utt_id for r in train_a} | {r.utt_id for r in dev_a} == \
        {r.utt_id for r in records}
