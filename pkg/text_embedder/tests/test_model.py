"""Fine-tuning behavior at desk scale on the keyword-separable toy corpus."""

import dataclasses
import json
import os

import pytest

from text_embedder.config import TextFinetuneConfig
from text_embedder.data import TextRecord, read_manifest
from text_embedder.model import (LOG_FILE, TrainingError, finetune_text_model,
                                 load_finetuned, majority_baseline_macro_f1)


def desk_config(tiny_model_dir, **overrides):
    # random-init encoder needs a hotter lr and looser clip than the
    # published fine-tuning defaults; both are plain config fields
    base = dict(epochs=4, learning_rate=5e-4, batch_size=16, max_seq_len=32,
                dev_fraction=0.2, grad_clip_norm=5.0, seed=0,
                pretrained_model=tiny_model_dir)
    base.update(overrides)
    return TextFinetuneConfig(**base)


@pytest.fixture(scope="session")
def trained(tiny_model_dir, toy_manifest, tmp_path_factory):
    out_dir = str(tmp_path_factory.mktemp("trained-model"))
    records = read_manifest(toy_manifest)
    cfg = desk_config(tiny_model_dir)
    model, tokenizer, log = finetune_text_model(records, cfg, out_dir)
    return {"dir": out_dir, "records": records, "cfg": cfg, "log": log}


def test_config_echo_exact(trained):
    assert trained["log"]["config"] == dataclasses.asdict(trained["cfg"])
    on_disk = json.load(open(os.path.join(trained["dir"], LOG_FILE)))
    assert on_disk["config"] == dataclasses.asdict(trained["cfg"])


def test_heldout_macro_f1_beats_majority_baseline(trained):
    baseline = majority_baseline_macro_f1(trained["records"])
    assert trained["log"]["dev_macro_f1"][-1] > baseline


def test_epoch_count_and_loss_logged(trained):
    assert len(trained["log"]["epoch_losses"]) == trained["cfg"].epochs
    assert len(trained["log"]["dev_macro_f1"]) == trained["cfg"].epochs
    assert trained["log"]["epoch_losses"][-1] < trained["log"]["epoch_losses"][0]


def test_surprise_rows_trained_under_fear_surprise(trained):
    labels = {r.label for r in trained["records"] if r.utt_id.startswith("surprise")}
    assert labels == {"Fear/Surprise"}
    assert "Fear/Surprise" in trained["log"]["classes"]


def test_saved_model_reloads(trained):
    model, tokenizer = load_finetuned(trained["dir"])
    assert model.config.num_labels == 5
    assert model.config.hidden_size == 768


def test_empty_manifest_rejected(tiny_model_dir, tmp_path):
    with pytest.raises(TrainingError, match="empty"):
        finetune_text_model([], desk_config(tiny_model_dir), str(tmp_path / "o"))


def test_label_outside_canonical_rejected(tiny_model_dir, tmp_path):
    records = [TextRecord("u1", "some text", "Boredom"),
               TextRecord("u2", "other text", "Happiness")]
    with pytest.raises(TrainingError, match="Boredom"):
        finetune_text_model(records, desk_config(tiny_model_dir), str(tmp_path / "o"))


def test_config_invariants():
    with pytest.raises(ValueError):
        TextFinetuneConfig(epochs=0)
    with pytest.raises(ValueError):
        TextFinetuneConfig(learning_rate=-1e-5)
    defaults = TextFinetuneConfig()
    assert defaults.epochs == 4
    assert defaults.learning_rate == 2e-5
    assert defaults.adam_epsilon == 1e-8
    assert defaults.grad_clip_norm == 1.0
