"""CLI: `finetune` trains the encoder, `export` writes an EMB1 archive.

Flags override the JSON config file (top-level keys = TextFinetuneConfig
fields; unknown keys rejected).  Exit codes: 0 success, 1 runtime failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .config import TextFinetuneConfig
from .data import DataError, read_manifest
from .emb1 import write_emb1
from .model import (TrainingError, export_text_embeddings, finetune_text_model,
                    load_finetuned)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="text-embedder",
        description="Fine-tune a text emotion encoder and export [CLS] embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("finetune", help="fine-tune the encoder on canonical emotion labels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="JSON file of TextFinetuneConfig fields")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-seq-len", type=int, default=None)
    p.add_argument("--pretrained-model", default=None)

    p = sub.add_parser("export", help="write final-layer [CLS] embeddings as EMB1")
    p.add_argument("--model", required=True, help="fine-tuned model directory")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-seq-len", type=int, default=None)
    return parser


def resolve_config(args) -> TextFinetuneConfig:
    raw: dict = {}
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, "r", encoding="utf-8") as f:
            raw = json.load(f)
        known = {f.name for f in dataclasses.fields(TextFinetuneConfig)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"{config_path}: unknown key(s) {sorted(unknown)}")
    for flag, key in [("seed", "seed"), ("epochs", "epochs"),
                      ("learning_rate", "learning_rate"), ("batch_size", "batch_size"),
                      ("max_seq_len", "max_seq_len"), ("pretrained_model", "pretrained_model")]:
        value = getattr(args, flag, None)
        if value is not None:
            raw[key] = value
    return TextFinetuneConfig(**raw)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2

    try:
        cfg = resolve_config(args)
    except (ValueError, TypeError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    os.makedirs(args.out_dir, exist_ok=True)
    try:
        if args.command == "finetune":
            records = read_manifest(args.manifest)
            _, _, log = finetune_text_model(records, cfg, args.out_dir)
            print(json.dumps({"epoch_losses": log["epoch_losses"],
                              "dev_macro_f1": log["dev_macro_f1"]}))
        else:
            records = read_manifest(args.manifest, require_label=False)
            model, tokenizer = load_finetuned(args.model)
            vectors = export_text_embeddings(model, tokenizer, records, cfg)
            out_path = os.path.join(args.out_dir, "text_embeddings.emb")
            write_emb1(out_path, vectors)
            print(json.dumps({"written": out_path, "count": len(vectors),
                              "dim": int(vectors[0][1].size)}))
    except (DataError, TrainingError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
