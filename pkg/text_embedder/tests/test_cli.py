"""End-to-end CLI: finetune then export, flag/config handling, exit codes."""

import json
import os

import pytest

from text_embedder import cli
from text_embedder.emb1 import read_emb1


@pytest.fixture(scope="module")
def finetuned_dir(tiny_model_dir, toy_manifest, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("cli-model"))
    cfg_path = os.path.join(out, "cfg.json")
    with open(cfg_path, "w") as f:
        json.dump({"epochs": 2, "learning_rate": 5e-4, "batch_size": 16,
                   "max_seq_len": 32, "grad_clip_norm": 5.0, "dev_fraction": 0.2,
                   "pretrained_model": tiny_model_dir}, f)
    code = cli.main(["finetune", "--manifest", toy_manifest, "--config", cfg_path,
                     "--out-dir", out, "--seed", "1"])
    assert code == 0
    return out


def test_finetune_writes_model_and_log(finetuned_dir):
    assert os.path.exists(os.path.join(finetuned_dir, "training_log.json"))
    log = json.load(open(os.path.join(finetuned_dir, "training_log.json")))
    assert len(log["epoch_losses"]) == 2
    assert log["config"]["seed"] == 1  # flag overrode the file


def test_export_writes_emb1(finetuned_dir, toy_manifest, tmp_path):
    out = str(tmp_path / "exp")
    code = cli.main(["export", "--model", finetuned_dir, "--manifest", toy_manifest,
                     "--out-dir", out, "--max-seq-len", "32"])
    assert code == 0
    archive = read_emb1(os.path.join(out, "text_embeddings.emb"))
    assert len(archive) == 150
    assert next(iter(archive.values())).shape == (768,)


def test_unknown_config_key_exit_2(tmp_path, toy_manifest):
    cfg_path = str(tmp_path / "bad.json")
    with open(cfg_path, "w") as f:
        json.dump({"learning_rtae": 1e-4}, f)
    code = cli.main(["finetune", "--manifest", toy_manifest, "--config", cfg_path,
                     "--out-dir", str(tmp_path / "o")])
    assert code == 2


def test_missing_manifest_exit_1(finetuned_dir, tmp_path):
    code = cli.main(["export", "--model", finetuned_dir,
                     "--manifest", str(tmp_path / "nope.jsonl"),
                     "--out-dir", str(tmp_path / "o")])
    assert code == 1


def test_usage_error_exit_2():
    assert cli.main(["no-such-command"]) == 2
