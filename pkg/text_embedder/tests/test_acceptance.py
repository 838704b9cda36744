"""Acceptance for the text component: 768-dim export readable by the audio
pipeline, and fine-tuning that beats the majority-class baseline."""

import contextlib
import struct

import numpy as np
import pytest

from text_embedder.config import TextFinetuneConfig
from text_embedder.data import read_manifest
from text_embedder.emb1 import write_emb1
from text_embedder.model import (export_text_embeddings, finetune_text_model,
                                 majority_baseline_macro_f1)


@contextlib.contextmanager
def criterion(label, description):
    try:
        yield
    except BaseException:
        print(f"FAIL  {label}: {description}")
        raise
    print(f"PASS  {label}: {description}")


def test_text_embedder_acceptance(tiny_model_dir, toy_manifest, tmp_path):
    with criterion("criterion 10 (text)",
                   "768-dim EMB1 export loads in the audio pipeline; fine-tuned"
                   " macro F1 beats the majority baseline"):
        records = read_manifest(toy_manifest)
        cfg = TextFinetuneConfig(epochs=4, learning_rate=5e-4, batch_size=16,
                                 max_seq_len=32, dev_fraction=0.2,
                                 grad_clip_norm=5.0, seed=0,
                                 pretrained_model=tiny_model_dir)
        model_dir = str(tmp_path / "model")
        model, tokenizer, log = finetune_text_model(records, cfg, model_dir)

        baseline = majority_baseline_macro_f1(records)
        assert log["dev_macro_f1"][-1] > baseline, \
            f"macro F1 {log['dev_macro_f1'][-1]:.3f} vs baseline {baseline:.3f}"

        vectors = export_text_embeddings(model, tokenizer, records, cfg)
        path = str(tmp_path / "text.emb")
        write_emb1(path, vectors)

        raw = open(path, "rb").read()
        assert raw[:4] == b"EMB1"
        dim, count = struct.unpack("<II", raw[4:12])
        assert dim == 768 and count == len(records)

        formats = pytest.importorskip(
            "affectpipe.formats", reason="audio pipeline not installed in this env"
        )
        back = formats.read_embeddings(path)
        assert len(back) == len(records)
        for utt_id, vec in vectors:
            assert np.array_equal(back[utt_id], vec.astype(np.float32))
