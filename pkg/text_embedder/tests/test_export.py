"""[CLS] export: dims, determinism, EMB1 bytes, cross-package readability."""

import json
import struct

import numpy as np
import pytest

from text_embedder.config import TextFinetuneConfig
from text_embedder.data import read_manifest
from text_embedder.emb1 import read_emb1, write_emb1
from text_embedder.model import export_text_embeddings, load_finetuned

from conftest import write_manifest


@pytest.fixture(scope="module")
def exported(tiny_model_dir, toy_manifest, tmp_path_factory):
    model, tokenizer = load_finetuned(tiny_model_dir)
    records = read_manifest(toy_manifest, require_label=False)
    cfg = TextFinetuneConfig(batch_size=16, max_seq_len=32,
                             pretrained_model=tiny_model_dir)
    vectors = export_text_embeddings(model, tokenizer, records, cfg)
    path = str(tmp_path_factory.mktemp("exp") / "text.emb")
    write_emb1(path, vectors)
    return {"records": records, "vectors": vectors, "path": path}


def test_one_vector_per_utterance_dim_768(exported):
    raw = open(exported["path"], "rb").read()
    assert raw[:4] == b"EMB1"
    dim, count = struct.unpack("<II", raw[4:12])
    assert dim == 768
    assert count == len(exported["records"])


def test_dim_constant_across_records(exported):
    dims = {v.size for _, v in exported["vectors"]}
    assert dims == {768}


def test_round_trips_through_own_reader(exported):
    back = read_emb1(exported["path"])
    assert list(back) == [r.utt_id for r in exported["records"]]
    for utt_id, vec in exported["vectors"]:
        assert np.array_equal(back[utt_id], vec.astype(np.float32))


def test_loads_in_the_audio_pipeline_reader(exported):
    formats = pytest.importorskip(
        "affectpipe.formats", reason="audio pipeline not installed in this env"
    )
    back = formats.read_embeddings(exported["path"])
    assert len(back) == len(exported["records"])
    vec = next(iter(back.values()))
    assert vec.dtype == np.float32 and vec.shape == (768,)


def test_identical_transcripts_identical_vectors(tiny_model_dir, tmp_path):
    path = str(tmp_path / "twins.jsonl")
    write_manifest(path, [
        {"utt_id": "first", "corpus": "DailyDialog", "raw_label": "other",
         "transcript": "the table is very joy"},
        {"utt_id": "second", "corpus": "DailyDialog", "raw_label": "happiness",
         "transcript": "the table is very joy"},
        {"utt_id": "third", "corpus": "DailyDialog", "raw_label": "other",
         "transcript": "a different sentence"},
    ])
    model, tokenizer = load_finetuned(tiny_model_dir)
    records = read_manifest(path, require_label=False)
    cfg = TextFinetuneConfig(batch_size=2, max_seq_len=32,
                             pretrained_model=tiny_model_dir)
    vectors = dict(export_text_embeddings(model, tokenizer, records, cfg))
    assert np.array_equal(vectors["first"], vectors["second"])
    assert not np.array_equal(vectors["first"], vectors["third"])
    # a second pass is bit-identical
    again = dict(export_text_embeddings(model, tokenizer, records, cfg))
    for utt_id in vectors:
        assert np.array_equal(vectors[utt_id], again[utt_id])


def test_missing_transcript_fails(tiny_model_dir, tmp_path):
    from text_embedder.data import DataError

    path = str(tmp_path / "m.jsonl")
    write_manifest(path, [{"utt_id": "u", "corpus": "DailyDialog", "raw_label": "other"}])
    with pytest.raises(DataError, match="transcript"):
        read_manifest(path, require_label=False)
