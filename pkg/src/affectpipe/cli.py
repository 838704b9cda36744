"""Command-line driver for the pipeline stages.

Subcommands cover the whole batch flow: extract-features, train-tdnn,
finetune-tdnn, extract-embeddings, fuse, train-backend, score-trials,
identify, eval, make-folds, make-trials.  Flags override the JSON config
file; every run echoes its fully resolved configuration and a run manifest
(inputs with hashes, seed, versions) into --out-dir, and all artifacts are
written atomically.  Exit codes: 0 success, 1 runtime failure, 2 usage.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, backend as bk, corpus, features as ft, formats, metrics, tdnn
from .config import ConfigError, PipelineConfig, config_as_dict, resolve_config

log = logging.getLogger("affectpipe")

SUBCOMMANDS = (
    "extract-features", "train-tdnn", "finetune-tdnn", "extract-embeddings",
    "fuse", "train-backend", "score-trials", "identify", "eval",
    "make-folds", "make-trials",
)

AUG_SUFFIX = "#noise"


class RuntimeFailure(Exception):
    """Stage-level failure: bad inputs, corrupt files, training aborts."""


class UsageFailure(Exception):
    """Bad flag combinations: reported like argparse errors, exit code 2."""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="affectpipe",
        description="Batch speech-emotion pipeline: features, TDNN, fusion, LDA/pLDA, metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON pipeline config file")
        p.add_argument("--out-dir", required=True, help="directory for all outputs")
        p.add_argument("--seed", type=int, default=None,
                       help="run seed (overrides config and AFFECT_SEED)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for per-utterance stages")
        return p

    p = common(sub.add_parser("extract-features", help="audio -> FEA1 feature files"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--noise-manifest", help="noise audio pool; adds one augmented copy per utterance")
    p.add_argument("--snr-db", type=float, nargs="+", default=None,
                   help="SNR choices for noise augmentation")

    p = common(sub.add_parser("train-tdnn", help="train a TDNN from random init"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--feats-index", required=True)
    p.add_argument("--label-field", choices=("speaker", "canonical", "raw"), default="canonical")
    p.add_argument("--arch", choices=("table4", "mini", "custom"), default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr-initial", type=float, default=None)
    p.add_argument("--lr-final", type=float, default=None)
    p.add_argument("--dropout", type=float, default=None)

    p = common(sub.add_parser("finetune-tdnn", help="adapt the head and fine-tune on emotions"))
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--feats-index", required=True)
    p.add_argument("--num-classes", type=int, default=5)
    p.add_argument("--add-layer8", action="store_true", default=None)
    p.add_argument("--noise-aug", action="store_true", default=None,
                   help="include #noise augmented copies from the feature index")
    p.add_argument("--first-six-lr-multiplier", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr-initial", type=float, default=None)
    p.add_argument("--lr-final", type=float, default=None)
    p.add_argument("--dropout", type=float, default=None)

    p = common(sub.add_parser("extract-embeddings", help="TDNN layer output -> EMB1"))
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--feats-index", required=True)
    p.add_argument("--layer", type=int, default=None, help="embedding layer ordinal (6, 7, 8)")

    p = common(sub.add_parser("fuse", help="concatenate speech and text embeddings"))
    p.add_argument("--speech-emb", required=True)
    p.add_argument("--text-emb")
    p.add_argument("--manifest", help="records being fused (needed for surrogate sampling)")
    p.add_argument("--pool-manifest", help="text pool to sample same-emotion surrogates from")
    p.add_argument("--speech-only", action="store_true")

    p = common(sub.add_parser("train-backend", help="fit LDA + pLDA on embeddings"))
    p.add_argument("--embeddings", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--lda-dim", type=int, default=None)
    p.add_argument("--label-policy", choices=("canonical", "raw"), default=None)

    p = common(sub.add_parser("score-trials", help="pLDA log-likelihood ratios for trial pairs"))
    p.add_argument("--backend", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--trials", required=True)

    p = common(sub.add_parser("identify", help="closed-set identification against enrollments"))
    p.add_argument("--backend", required=True)
    p.add_argument("--embeddings", required=True, help="probe embeddings (EMB1)")
    p.add_argument("--enroll-embeddings", required=True)
    p.add_argument("--enroll-manifest", required=True)
    p.add_argument("--manifest", help="gold labels for the probes (enables a metrics report)")
    p.add_argument("--label-policy", choices=("canonical", "raw"), default=None)

    p = common(sub.add_parser("eval", help="EER from scores and/or accuracy+F1 from predictions"))
    p.add_argument("--trials")
    p.add_argument("--scores")
    p.add_argument("--preds", help="predictions JSONL from `identify`")
    p.add_argument("--manifest", help="gold manifest for predictions")
    p.add_argument("--label-policy", choices=("canonical", "raw"), default=None)

    p = common(sub.add_parser("make-folds", help="session-based cross-validation folds"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, default=5)

    p = common(sub.add_parser("make-trials", help="target/nontarget confirmation pairs"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--ids-file", help="restrict to these utterance ids (one per line)")
    p.add_argument("--policy", choices=("all_pairs", "balanced"), default=None)
    p.add_argument("--label-policy", choices=("canonical", "raw"), default=None)
    p.add_argument("--n-target", type=int, default=None)
    p.add_argument("--n-nontarget", type=int, default=None)

    return parser


def _overrides_from_args(args) -> dict:
    """Map provided CLI flags onto config keys (flags win over the file)."""
    out: dict = {}

    def put(section, key, value):
        if value is not None:
            out.setdefault(section, {})[key] = value

    put("finetune", "epochs", getattr(args, "epochs", None))
    put("finetune", "batch_size", getattr(args, "batch_size", None))
    put("finetune", "lr_initial", getattr(args, "lr_initial", None))
    put("finetune", "lr_final", getattr(args, "lr_final", None))
    put("finetune", "dropout", getattr(args, "dropout", None))
    put("finetune", "first_six_lr_multiplier", getattr(args, "first_six_lr_multiplier", None))
    put("finetune", "add_layer8", getattr(args, "add_layer8", None))
    put("finetune", "noise_aug", getattr(args, "noise_aug", None))
    put("backend", "lda_target_dim", getattr(args, "lda_dim", None))
    put("tdnn", "arch", getattr(args, "arch", None))
    put("eval", "policy", getattr(args, "policy", None))
    put("eval", "label_policy", getattr(args, "label_policy", None))
    put("eval", "n_target", getattr(args, "n_target", None))
    put("eval", "n_nontarget", getattr(args, "n_nontarget", None))
    put("eval", "embedding_layer", getattr(args, "layer", None))
    return out


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_run_metadata(args, cfg: PipelineConfig, inputs: "list[str]", outputs: "list[str]") -> None:
    resolved = config_as_dict(cfg)
    formats.write_text_atomic(
        os.path.join(args.out_dir, "config_resolved.json"),
        json.dumps(resolved, indent=2, sort_keys=True) + "\n",
    )
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:] if sys.argv and "pytest" not in sys.argv[0] else [],
        "seed": cfg.seed,
        "config": resolved,
        "inputs": {p: _sha256(p) for p in inputs if p and os.path.exists(p)},
        "outputs": sorted(outputs),
        "versions": {
            "affectpipe": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
    }
    formats.write_text_atomic(
        os.path.join(args.out_dir, "run_manifest.json"),
        json.dumps(manifest, indent=2, sort_keys=True) + "\n",
    )


def _resolve_path(base_file: str, path: str) -> str:
    if os.path.isabs(path):
        return path
    return os.path.join(os.path.dirname(os.path.abspath(base_file)), path)


def _load_manifest(path: str) -> corpus.Manifest:
    try:
        return corpus.build_manifest(path)
    except (corpus.ManifestError, FileNotFoundError, formats.FormatError) as exc:
        raise RuntimeFailure(str(exc)) from exc


def _record_label(rec: corpus.UtteranceRecord, policy: str) -> str:
    if policy == "raw":
        return rec.raw_label.strip().lower()
    return rec.canonical_label()


def _feature_config(cfg: PipelineConfig) -> ft.FeatureConfig:
    return ft.FeatureConfig(mfcc=cfg.features.mfcc, pitch=cfg.features.pitch, cmn=cfg.features.cmn)


def _tdnn_layers(cfg: PipelineConfig, num_classes: int):
    section = cfg.tdnn
    if section.arch == "table4":
        return tdnn.table4_layers(num_classes, section.input_dim)
    if section.arch == "mini":
        return tdnn.mini_layers(num_classes, section.input_dim)
    frame, dense = [], []
    for row in section.layers:
        kind = row.get("kind")
        if kind == "tdnn":
            frame.append((tuple(row["offsets"]), int(row["out_dim"])))
        elif kind == "dense":
            dense.append(int(row["out_dim"]))
        else:
            raise RuntimeFailure(f"custom tdnn layer kind must be tdnn or dense, got {kind!r}")
    return tdnn.make_layers(section.input_dim, frame, dense, num_classes)


# ---------------------------------------------------------------------------
# Stage implementations
# ---------------------------------------------------------------------------

def cmd_extract_features(args, cfg: PipelineConfig) -> "list[str]":
    manifest = _load_manifest(args.manifest)
    fcfg = _feature_config(cfg)
    noise_buffers = []
    if args.noise_manifest:
        noise_manifest = _load_manifest(args.noise_manifest)
        for rec in noise_manifest:
            if not rec.audio_path:
                raise RuntimeFailure(f"noise record {rec.utt_id!r} lacks audio_path")
            noise_buffers.append(
                ft.load_wav(_resolve_path(args.noise_manifest, rec.audio_path), rec.utt_id)
            )
        if not noise_buffers:
            raise RuntimeFailure("noise manifest is empty")
    snr_choices = args.snr_db if args.snr_db is not None else cfg.features.augment_snr_db

    feats_dir = os.path.join(args.out_dir, "feats")
    os.makedirs(feats_dir, exist_ok=True)

    def one(rec: corpus.UtteranceRecord):
        if not rec.audio_path:
            raise RuntimeFailure(f"record {rec.utt_id!r} lacks audio_path")
        audio = ft.load_wav(_resolve_path(args.manifest, rec.audio_path), rec.utt_id)
        rows = []
        seed = ft.utterance_seed(cfg.seed, rec.utt_id)
        mat = ft.extract_features(audio, fcfg, seed=seed)
        fname = f"{_safe_name(rec.utt_id)}.fea"
        formats.write_features(os.path.join(feats_dir, fname), mat)
        rows.append({"id": rec.utt_id, "path": os.path.join("feats", fname)})
        if noise_buffers:
            rng = np.random.default_rng(seed)
            noise = noise_buffers[int(rng.integers(0, len(noise_buffers)))]
            snr = float(snr_choices[int(rng.integers(0, len(snr_choices)))])
            noisy = ft.augment_noise(audio, noise, snr, seed=seed)
            noisy_id = rec.utt_id + AUG_SUFFIX
            mat_n = ft.extract_features(
                ft.AudioBuffer(noisy.samples, noisy.sample_rate, noisy_id), fcfg, seed=seed
            )
            fname_n = f"{_safe_name(noisy_id)}.fea"
            formats.write_features(os.path.join(feats_dir, fname_n), mat_n)
            rows.append({"id": noisy_id, "path": os.path.join("feats", fname_n)})
        return rows

    try:
        if args.threads > 1:
            with ThreadPoolExecutor(max_workers=args.threads) as pool:
                row_groups = list(pool.map(one, manifest.records))
        else:
            row_groups = [one(rec) for rec in manifest.records]
    except (ft.AudioError, FileNotFoundError, ValueError) as exc:
        raise RuntimeFailure(str(exc)) from exc

    index_path = os.path.join(args.out_dir, "feats_index.jsonl")
    entries = [row for group in row_groups for row in group]
    formats.write_feature_index(index_path, entries)
    log.info("extracted features for %d records (%d files)", len(manifest), len(entries))
    return ["feats_index.jsonl"] + [e["path"] for e in entries]


def _safe_name(utt_id: str) -> str:
    safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in utt_id)
    if safe != utt_id:  # sanitizing may collide; disambiguate with a hash
        safe += "-" + hashlib.sha1(utt_id.encode("utf-8")).hexdigest()[:8]
    return safe


def _load_training_set(manifest, index_path, label_of, include_aug: bool):
    index = formats.read_feature_index(index_path)
    dataset, labels = [], []
    for rec in manifest:
        if rec.utt_id not in index:
            raise RuntimeFailure(f"no features for {rec.utt_id!r} in {index_path}")
        lab = label_of(rec)
        if lab is None:
            continue
        path, offset = index[rec.utt_id]
        dataset.append((formats.read_features(path, offset), lab))
        labels.append(lab)
        aug_id = rec.utt_id + AUG_SUFFIX
        if include_aug and aug_id in index:
            path, offset = index[aug_id]
            dataset.append((formats.read_features(path, offset), lab))
            labels.append(lab)
    if not dataset:
        raise RuntimeFailure("no trainable records in manifest")
    return dataset, labels


def cmd_train_tdnn(args, cfg: PipelineConfig) -> "list[str]":
    manifest = _load_manifest(args.manifest)

    def label_of(rec):
        if args.label_field == "speaker":
            if rec.speaker is None:
                raise RuntimeFailure(f"record {rec.utt_id!r} lacks a speaker id")
            return rec.speaker
        try:
            return _record_label(rec, args.label_field)
        except corpus.ExcludedLabelError:
            return None

    dataset, labels = _load_training_set(manifest, args.feats_index, label_of, include_aug=False)
    classes = sorted(set(labels))
    class_index = {c: i for i, c in enumerate(classes)}
    samples = [(feats, class_index[lab]) for (feats, lab) in dataset]

    model = tdnn.build_model(
        _tdnn_layers(cfg, len(classes)), cfg.tdnn.input_dim, classes, seed=cfg.seed
    )
    try:
        model, tlog = tdnn.finetune(model, samples, cfg.finetune)
    except tdnn.TrainingError as exc:
        raise RuntimeFailure(str(exc)) from exc

    tdnn.save_model(os.path.join(args.out_dir, "tdnn.tdn"), model,
                    config_echo=dict(vars(cfg.finetune)))
    formats.write_text_atomic(
        os.path.join(args.out_dir, "training_log.json"),
        json.dumps({"epoch_losses": tlog.epoch_losses, "final_lr": tlog.step_lrs[-1],
                    "skipped": tlog.skipped_utterances, "config": tlog.config},
                   indent=2, sort_keys=True) + "\n",
    )
    log.info("trained %s-way TDNN; final epoch loss %.4f", len(classes), tlog.epoch_losses[-1])
    return ["tdnn.tdn", "training_log.json"]


def cmd_finetune_tdnn(args, cfg: PipelineConfig) -> "list[str]":
    manifest = _load_manifest(args.manifest)
    try:
        model = tdnn.load_model(args.model)
    except (formats.FormatError, FileNotFoundError, tdnn.ModelError) as exc:
        raise RuntimeFailure(str(exc)) from exc

    def label_of(rec):
        try:
            return rec.canonical_label()
        except corpus.ExcludedLabelError:
            return None

    include_aug = bool(cfg.finetune.noise_aug)
    dataset, labels = _load_training_set(manifest, args.feats_index, label_of, include_aug)
    classes = sorted(set(labels))
    if len(classes) > args.num_classes:
        raise RuntimeFailure(
            f"manifest has {len(classes)} classes but head is {args.num_classes}-way"
        )
    classes = list(corpus.CANONICAL_CLASSES[: args.num_classes]) \
        if set(classes) <= set(corpus.CANONICAL_CLASSES) else classes
    class_index = {c: i for i, c in enumerate(classes)}
    samples = [(feats, class_index[lab]) for (feats, lab) in dataset]

    adapted = tdnn.adapt_head(model, num_classes=len(classes),
                              add_layer8=cfg.finetune.add_layer8, seed=cfg.seed,
                              class_labels=classes)
    try:
        adapted, tlog = tdnn.finetune(adapted, samples, cfg.finetune)
    except tdnn.TrainingError as exc:
        raise RuntimeFailure(str(exc)) from exc

    tdnn.save_model(os.path.join(args.out_dir, "tdnn_finetuned.tdn"), adapted,
                    config_echo=dict(vars(cfg.finetune)))
    formats.write_text_atomic(
        os.path.join(args.out_dir, "training_log.json"),
        json.dumps({"epoch_losses": tlog.epoch_losses, "final_lr": tlog.step_lrs[-1],
                    "skipped": tlog.skipped_utterances, "config": tlog.config},
                   indent=2, sort_keys=True) + "\n",
    )
    return ["tdnn_finetuned.tdn", "training_log.json"]


def cmd_extract_embeddings(args, cfg: PipelineConfig) -> "list[str]":
    manifest = _load_manifest(args.manifest)
    try:
        model = tdnn.load_model(args.model)
        index = formats.read_feature_index(args.feats_index)
    except (formats.FormatError, FileNotFoundError, tdnn.ModelError) as exc:
        raise RuntimeFailure(str(exc)) from exc
    layer = args.layer if args.layer is not None else cfg.eval.embedding_layer

    def one(rec):
        if rec.utt_id not in index:
            raise RuntimeFailure(f"no features for {rec.utt_id!r} in {args.feats_index}")
        path, offset = index[rec.utt_id]
        feats = formats.read_features(path, offset)
        return rec.utt_id, tdnn.extract_embedding(model, feats, layer)

    try:
        if args.threads > 1:
            with ThreadPoolExecutor(max_workers=args.threads) as pool:
                pairs = list(pool.map(one, manifest.records))
        else:
            pairs = [one(rec) for rec in manifest.records]
    except (formats.FormatError, tdnn.ModelError) as exc:
        raise RuntimeFailure(str(exc)) from exc

    out = os.path.join(args.out_dir, "embeddings.emb")
    formats.write_embeddings(out, pairs)
    log.info("extracted %d layer-%d embeddings", len(pairs), layer)
    return ["embeddings.emb"]


def cmd_fuse(args, cfg: PipelineConfig) -> "list[str]":
    try:
        speech = formats.read_embeddings(args.speech_emb)
    except (formats.FormatError, FileNotFoundError) as exc:
        raise RuntimeFailure(str(exc)) from exc

    outputs = []
    if args.speech_only or not args.text_emb:
        if not args.speech_only:
            raise UsageFailure("no --text-emb given; pass --speech-only to fuse without text")
        fused = [(utt_id, vec) for utt_id, vec in speech.items()]
        formats.write_embeddings(os.path.join(args.out_dir, "fused.emb"), fused)
        return ["fused.emb"]

    try:
        text = formats.read_embeddings(args.text_emb)
    except (formats.FormatError, FileNotFoundError) as exc:
        raise RuntimeFailure(str(exc)) from exc

    surrogate_map: dict[str, str] = {}
    if args.pool_manifest:
        if not args.manifest:
            raise UsageFailure("--pool-manifest requires --manifest for the records being fused")
        manifest = _load_manifest(args.manifest)
        pool = _load_manifest(args.pool_manifest)
        records = [manifest.get(utt_id) for utt_id in speech if utt_id in manifest]
        try:
            surrogate_map = corpus.assign_surrogates(records, pool, seed=cfg.seed)
        except corpus.ManifestError as exc:
            raise RuntimeFailure(str(exc)) from exc
        formats.write_text_atomic(
            os.path.join(args.out_dir, "surrogate_map.json"),
            json.dumps(surrogate_map, indent=2, sort_keys=True) + "\n",
        )
        outputs.append("surrogate_map.json")

    fused = []
    for utt_id, vec in speech.items():
        text_id = surrogate_map.get(utt_id, utt_id)
        if text_id not in text:
            raise RuntimeFailure(f"no text embedding for {text_id!r} (speech {utt_id!r})")
        rec = corpus.fuse_embeddings(
            corpus.EmbeddingRecord(utt_id, "speech", vec),
            corpus.EmbeddingRecord(text_id, "text", text[text_id]),
            surrogate_map={utt_id: text_id},
        )
        fused.append((rec.utt_id, rec.vector))
    formats.write_embeddings(os.path.join(args.out_dir, "fused.emb"), fused)
    outputs.insert(0, "fused.emb")
    log.info("fused %d embeddings (%d surrogate-mapped)", len(fused), len(surrogate_map))
    return outputs


def cmd_train_backend(args, cfg: PipelineConfig) -> "list[str]":
    manifest = _load_manifest(args.manifest)
    try:
        embeddings = formats.read_embeddings(args.embeddings)
    except (formats.FormatError, FileNotFoundError) as exc:
        raise RuntimeFailure(str(exc)) from exc
    policy = args.label_policy or cfg.eval.label_policy

    vectors, labels = [], []
    for utt_id, vec in embeddings.items():
        if utt_id not in manifest:
            continue
        rec = manifest.get(utt_id)
        try:
            labels.append(_record_label(rec, policy))
        except corpus.ExcludedLabelError:
            continue
        vectors.append(vec)
    if not vectors:
        raise RuntimeFailure("no labelled embeddings to train on")

    try:
        model = bk.fit_backend(np.stack(vectors), labels, cfg.backend)
    except bk.BackendError as exc:
        raise RuntimeFailure(str(exc)) from exc
    bk.save_backend(os.path.join(args.out_dir, "backend.pld"), model)
    log.info("backend: LDA %d->%d (%d Fisher + %d filler), pLDA over %d classes",
             model.lda.in_dim, model.lda.out_dim, model.lda.n_fisher,
             model.lda.n_filler, len(model.class_labels))
    return ["backend.pld"]


def cmd_score_trials(args, cfg: PipelineConfig) -> "list[str]":
    try:
        model = bk.load_backend(args.backend)
        embeddings = formats.read_embeddings(args.embeddings)
        trials = formats.read_trials(args.trials)
    except (formats.FormatError, FileNotFoundError, bk.BackendError) as exc:
        raise RuntimeFailure(str(exc)) from exc
    if not trials:
        raise RuntimeFailure(f"{args.trials}: no trials")

    missing = [i for t in trials for i in t[:2] if i not in embeddings]
    if missing:
        raise RuntimeFailure(f"embeddings missing for trial ids: {sorted(set(missing))[:5]} ...")
    u1 = model.transform(np.stack([embeddings[a] for a, _, _ in trials]))
    u2 = model.transform(np.stack([embeddings[b] for _, b, _ in trials]))
    try:
        scores = bk.score_pairs(model.plda, u1, u2)
    except bk.BackendError as exc:
        raise RuntimeFailure(str(exc)) from exc
    formats.write_scores(
        os.path.join(args.out_dir, "scores.txt"),
        [(a, b, float(s)) for (a, b, _), s in zip(trials, scores)],
    )
    return ["scores.txt"]


def cmd_identify(args, cfg: PipelineConfig) -> "list[str]":
    try:
        model = bk.load_backend(args.backend)
        probes = formats.read_embeddings(args.embeddings)
        enroll_vecs = formats.read_embeddings(args.enroll_embeddings)
    except (formats.FormatError, FileNotFoundError, bk.BackendError) as exc:
        raise RuntimeFailure(str(exc)) from exc
    enroll_manifest = _load_manifest(args.enroll_manifest)
    policy = args.label_policy or cfg.eval.label_policy

    enrollments: dict[str, list[np.ndarray]] = {}
    for utt_id, vec in enroll_vecs.items():
        if utt_id not in enroll_manifest:
            continue
        try:
            lab = _record_label(enroll_manifest.get(utt_id), policy)
        except corpus.ExcludedLabelError:
            continue
        enrollments.setdefault(lab, []).append(vec)
    if not enrollments:
        raise RuntimeFailure("no enrollment classes after labelling")
    enrolled = {
        lab: model.transform(np.stack(vecs)) for lab, vecs in sorted(enrollments.items())
    }

    predictions = []
    for utt_id, vec in probes.items():
        scores, best = bk.identify(model.plda, model.transform(vec), enrolled)
        predictions.append({"utt_id": utt_id, "predicted": best,
                            "scores": {k: float(v) for k, v in scores.items()}})
    formats.write_text_atomic(
        os.path.join(args.out_dir, "predictions.jsonl"),
        "\n".join(json.dumps(p, sort_keys=True) for p in predictions) + "\n",
    )
    outputs = ["predictions.jsonl"]

    if args.manifest:
        gold_manifest = _load_manifest(args.manifest)
        preds, golds = [], []
        for p in predictions:
            if p["utt_id"] not in gold_manifest:
                continue
            try:
                golds.append(_record_label(gold_manifest.get(p["utt_id"]), policy))
            except corpus.ExcludedLabelError:
                continue
            preds.append(p["predicted"])
        if preds:
            classes = sorted(set(golds) | set(enrolled))
            report = metrics.report_json(
                classification=metrics.compute_classification_metrics(preds, golds, classes)
            )
            metrics.dump_report(os.path.join(args.out_dir, "report.json"), report)
            print(metrics.report_table(report))
            outputs.append("report.json")
    return outputs


def cmd_eval(args, cfg: PipelineConfig) -> "list[str]":
    report: dict = {}
    if bool(args.trials) != bool(args.scores):
        raise UsageFailure("--trials and --scores must be given together")
    if not args.trials and not args.preds:
        raise UsageFailure("nothing to evaluate: pass --trials/--scores and/or --preds")

    if args.trials:
        try:
            trials = formats.read_trials(args.trials)
            scored = formats.read_scores(args.scores)
        except (formats.FormatError, FileNotFoundError) as exc:
            raise RuntimeFailure(str(exc)) from exc
        key = {(a, b): t for a, b, t in trials}
        tar, non = [], []
        for a, b, s in scored:
            if (a, b) not in key:
                raise RuntimeFailure(f"scored pair ({a}, {b}) not present in {args.trials}")
            (tar if key[(a, b)] else non).append(s)
        try:
            eer = metrics.compute_eer(tar, non)
        except metrics.MetricsError as exc:
            raise RuntimeFailure(str(exc)) from exc
        report.update(metrics.report_json(eer=eer, n_trials=len(scored)))

    if args.preds:
        if not args.manifest:
            raise UsageFailure("--preds requires --manifest for gold labels")
        manifest = _load_manifest(args.manifest)
        policy = args.label_policy or cfg.eval.label_policy
        preds, golds = [], []
        try:
            for _, row in formats.iter_jsonl(args.preds):
                if row["utt_id"] not in manifest:
                    continue
                try:
                    golds.append(_record_label(manifest.get(row["utt_id"]), policy))
                except corpus.ExcludedLabelError:
                    continue
                preds.append(row["predicted"])
        except (formats.FormatError, KeyError) as exc:
            raise RuntimeFailure(f"{args.preds}: {exc}") from exc
        if not preds:
            raise RuntimeFailure("no predictions matched the gold manifest")
        classes = sorted(set(golds) | set(preds))
        try:
            cls = metrics.compute_classification_metrics(preds, golds, classes)
        except metrics.MetricsError as exc:
            raise RuntimeFailure(str(exc)) from exc
        report.update(metrics.report_json(classification=cls))

    metrics.dump_report(os.path.join(args.out_dir, "report.json"), report)
    print(metrics.report_table(report))
    return ["report.json"]


def cmd_make_folds(args, cfg: PipelineConfig) -> "list[str]":
    manifest = _load_manifest(args.manifest)
    try:
        folds = corpus.make_folds(manifest, k=args.k)
    except corpus.ManifestError as exc:
        raise RuntimeFailure(str(exc)) from exc
    payload = [{"fold": i + 1, "train": train, "test": test}
               for i, (train, test) in enumerate(folds)]
    formats.write_text_atomic(
        os.path.join(args.out_dir, "folds.json"),
        json.dumps(payload, indent=2) + "\n",
    )
    return ["folds.json"]


def cmd_make_trials(args, cfg: PipelineConfig) -> "list[str]":
    manifest = _load_manifest(args.manifest)
    if args.ids_file:
        with open(args.ids_file, "r", encoding="utf-8") as f:
            ids = [line.strip() for line in f if line.strip()]
    else:
        ids = manifest.ids()
    policy = args.policy or cfg.eval.policy
    label_policy = args.label_policy or cfg.eval.label_policy
    n_target = args.n_target if args.n_target is not None else cfg.eval.n_target
    n_nontarget = args.n_nontarget if args.n_nontarget is not None else cfg.eval.n_nontarget
    try:
        trials = corpus.make_trials(ids, manifest, policy=policy, label_policy=label_policy,
                                    seed=cfg.seed, n_target=n_target, n_nontarget=n_nontarget)
    except (corpus.ManifestError, corpus.LabelError, ValueError) as exc:
        raise RuntimeFailure(str(exc)) from exc
    formats.write_trials(
        os.path.join(args.out_dir, "trials.txt"),
        [(t.utt_id_1, t.utt_id_2, t.is_target) for t in trials],
    )
    return ["trials.txt"]


_DISPATCH = {
    "extract-features": cmd_extract_features,
    "train-tdnn": cmd_train_tdnn,
    "finetune-tdnn": cmd_finetune_tdnn,
    "extract-embeddings": cmd_extract_embeddings,
    "fuse": cmd_fuse,
    "train-backend": cmd_train_backend,
    "score-trials": cmd_score_trials,
    "identify": cmd_identify,
    "eval": cmd_eval,
    "make-folds": cmd_make_folds,
    "make-trials": cmd_make_trials,
}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2

    try:
        cfg = resolve_config(args.config, _overrides_from_args(args), seed_flag=args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    os.makedirs(args.out_dir, exist_ok=True)
    try:
        outputs = _DISPATCH[args.command](args, cfg)
    except UsageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _write_run_metadata(
        args, cfg,
        inputs=[getattr(args, name, None) for name in
                ("manifest", "feats_index", "model", "embeddings", "speech_emb", "text_emb",
                 "backend", "trials", "scores", "preds", "enroll_embeddings", "enroll_manifest",
                 "noise_manifest", "pool_manifest", "ids_file", "config")],
        outputs=outputs,
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
