"""Corpus plumbing: manifests, canonical label grouping, folds, trials, fusion.

Corpus-specific raw emotion labels collapse onto five canonical classes
(Happiness, Sadness, Fear/Surprise, Anger/Disgust, Neutral).  IEMOCAP rows
whose annotators never agreed carry the reserved label ``xxx`` and are
excluded rather than mapped.  Manifests are JSONL, one utterance per line;
trial lists pair utterances as target/nontarget under either the canonical
grouping or the raw labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .formats import FormatError, iter_jsonl

CANONICAL_CLASSES = ("Happiness", "Sadness", "Fear/Surprise", "Anger/Disgust", "Neutral")

EXCLUDED_LABEL = "xxx"

# raw label -> canonical class, per corpus (matched case-insensitively)
_LABEL_MAP = {
    "IEMOCAP": {
        "happiness": "Happiness",
        "excitement": "Happiness",
        "sadness": "Sadness",
        "fear": "Fear/Surprise",
        "surprise": "Fear/Surprise",
        "anger": "Anger/Disgust",
        "disgust": "Anger/Disgust",
        "frustration": "Anger/Disgust",
        "neutral": "Neutral",
    },
    "Crema-D": {
        "happiness": "Happiness",
        "excitement": "Happiness",
        "sadness": "Sadness",
        "fear": "Fear/Surprise",
        "anger": "Anger/Disgust",
        "disgust": "Anger/Disgust",
        "neutral": "Neutral",
    },
    "DailyDialog": {
        "happiness": "Happiness",
        "sadness": "Sadness",
        "fear": "Fear/Surprise",
        "surprise": "Fear/Surprise",
        "anger": "Anger/Disgust",
        "disgust": "Anger/Disgust",
        "other": "Neutral",
    },
    # synthetic / external corpora address the canonical classes directly
    "other": {c.lower(): c for c in CANONICAL_CLASSES},
}

CORPORA = tuple(_LABEL_MAP)


class LabelError(Exception):
    """Unknown raw label for a corpus."""


class ExcludedLabelError(LabelError):
    """The label marks missing annotator agreement and must be dropped."""


class ManifestError(Exception):
    """Manifest violates its schema (duplicates, missing fields, bad JSON)."""


def canonicalize_label(corpus: str, raw_label: str) -> str:
    """Map a corpus raw label to its canonical emotion class."""
    if corpus not in _LABEL_MAP:
        raise LabelError(f"unknown corpus {corpus!r} (known: {', '.join(CORPORA)})")
    key = raw_label.strip().lower()
    if corpus == "IEMOCAP" and key == EXCLUDED_LABEL:
        raise ExcludedLabelError(
            "IEMOCAP label 'xxx' (no annotator agreement) is excluded, not mapped"
        )
    table = _LABEL_MAP[corpus]
    if key not in table:
        raise LabelError(f"unknown label {raw_label!r} for corpus {corpus}")
    return table[key]


@dataclass
class UtteranceRecord:
    utt_id: str
    corpus: str
    raw_label: str
    audio_path: str | None = None
    transcript: str | None = None
    speaker: str | None = None
    session: int | None = None
    intensity: str | None = None
    agreement: float | None = None  # stored if present, never used downstream

    def canonical_label(self) -> str:
        return canonicalize_label(self.corpus, self.raw_label)


_REQUIRED_FIELDS = ("utt_id", "corpus", "raw_label")
_OPTIONAL_FIELDS = ("audio_path", "transcript", "speaker", "session", "intensity", "agreement")


@dataclass
class Manifest:
    records: list[UtteranceRecord] = field(default_factory=list)

    def __post_init__(self):
        self._by_id = {}
        for rec in self.records:
            if rec.utt_id in self._by_id:
                raise ManifestError(f"duplicate utt_id {rec.utt_id!r}")
            self._by_id[rec.utt_id] = rec

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __contains__(self, utt_id: str):
        return utt_id in self._by_id

    def get(self, utt_id: str) -> UtteranceRecord:
        if utt_id not in self._by_id:
            raise ManifestError(f"utt_id {utt_id!r} not in manifest")
        return self._by_id[utt_id]

    def ids(self) -> list[str]:
        return [r.utt_id for r in self.records]


def _record_from_row(row: dict, where: str) -> UtteranceRecord:
    unknown = set(row) - set(_REQUIRED_FIELDS) - set(_OPTIONAL_FIELDS)
    if unknown:
        raise ManifestError(f"{where}: unknown field(s) {sorted(unknown)}")
    for key in _REQUIRED_FIELDS:
        if key not in row or row[key] in (None, ""):
            raise ManifestError(f"{where}: missing required field {key!r}")
    corpus = row["corpus"]
    if corpus not in CORPORA:
        raise ManifestError(f"{where}: unknown corpus {corpus!r}")
    session = row.get("session")
    if corpus == "IEMOCAP":
        if session is None:
            raise ManifestError(f"{where}: IEMOCAP record {row['utt_id']!r} lacks a session")
        session = int(session)
        if not (1 <= session <= 5):
            raise ManifestError(f"{where}: IEMOCAP session must be 1..5, got {session}")
    elif session is not None:
        session = int(session)
    return UtteranceRecord(
        utt_id=str(row["utt_id"]),
        corpus=corpus,
        raw_label=str(row["raw_label"]),
        audio_path=row.get("audio_path"),
        transcript=row.get("transcript"),
        speaker=row.get("speaker"),
        session=session,
        intensity=row.get("intensity"),
        agreement=row.get("agreement"),
    )


def build_manifest(path: str) -> Manifest:
    """Read and validate a JSONL manifest; errors carry the offending line number."""
    records = []
    seen = set()
    try:
        rows = list(iter_jsonl(path))
    except FormatError as exc:
        raise ManifestError(str(exc)) from exc
    for lineno, row in rows:
        rec = _record_from_row(row, f"{path}:{lineno}")
        if rec.utt_id in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate utt_id {rec.utt_id!r}")
        seen.add(rec.utt_id)
        records.append(rec)
    return Manifest(records)


def manifest_from_rows(rows: Iterable[dict]) -> Manifest:
    records = []
    for i, row in enumerate(rows, start=1):
        records.append(_record_from_row(row, f"row {i}"))
    return Manifest(records)


def make_folds(manifest: Manifest, k: int = 5) -> "list[tuple[list[str], list[str]]]":
    """Session-based folds: fold i holds session i out for test, trains on the rest.

    Deterministic and independent of the manifest's record order.
    """
    missing = [r.utt_id for r in manifest if r.session is None]
    if missing:
        raise ManifestError(
            f"{len(missing)} record(s) lack a session id (first: {missing[0]!r}); "
            "session folds need every record assigned"
        )
    sessions = sorted({r.session for r in manifest})
    if len(sessions) != k:
        raise ManifestError(f"expected {k} sessions, manifest has {len(sessions)}: {sessions}")
    by_session: dict[int, list[str]] = {s: [] for s in sessions}
    for r in manifest:
        by_session[r.session].append(r.utt_id)
    for s in sessions:
        by_session[s].sort()
    folds = []
    for s in sessions:
        test = list(by_session[s])
        train = [u for t in sessions if t != s for u in by_session[t]]
        folds.append((train, test))
    return folds


@dataclass(frozen=True)
class TrialPair:
    utt_id_1: str
    utt_id_2: str
    is_target: bool
    label_policy: str = "canonical"


def _trial_label(rec: UtteranceRecord, label_policy: str) -> str | None:
    """Class identity for trial purposes; None means the record is excluded."""
    if rec.corpus == "IEMOCAP" and rec.raw_label.strip().lower() == EXCLUDED_LABEL:
        return None
    if label_policy == "canonical":
        return rec.canonical_label()
    if label_policy == "raw":
        return rec.raw_label.strip().lower()
    raise ValueError(f"label_policy must be 'canonical' or 'raw', got {label_policy!r}")


def make_trials(ids: Sequence[str], manifest: Manifest, policy: str = "all_pairs",
                label_policy: str = "canonical", seed: int = 0,
                n_target: int = 0, n_nontarget: int = 0) -> "list[TrialPair]":
    """Generate confirmation trials over the given utterance ids.

    ``all_pairs`` yields every unordered pair; ``balanced`` samples n_target
    target and n_nontarget nontarget pairs without replacement (seeded).
    Records labelled ``xxx`` are excluded under both label policies.
    """
    labels = {}
    for utt_id in ids:
        lab = _trial_label(manifest.get(utt_id), label_policy)
        if lab is not None:
            labels[utt_id] = lab
    usable = sorted(labels)
    if len(usable) < 2:
        raise ManifestError(f"need at least 2 usable utterances for trials, have {len(usable)}")

    if policy == "all_pairs":
        return [
            TrialPair(a, b, labels[a] == labels[b], label_policy)
            for i, a in enumerate(usable)
            for b in usable[i + 1 :]
        ]
    if policy == "balanced":
        targets, nontargets = [], []
        for i, a in enumerate(usable):
            for b in usable[i + 1 :]:
                (targets if labels[a] == labels[b] else nontargets).append((a, b))
        if n_target > len(targets) or n_nontarget > len(nontargets):
            raise ManifestError(
                f"balanced policy unsatisfiable: requested {n_target}/{n_nontarget}, "
                f"available {len(targets)} target / {len(nontargets)} nontarget pairs"
            )
        rng = np.random.default_rng(seed)
        chosen_t = [targets[i] for i in rng.choice(len(targets), n_target, replace=False)]
        chosen_n = [nontargets[i] for i in rng.choice(len(nontargets), n_nontarget, replace=False)]
        return (
            [TrialPair(a, b, True, label_policy) for a, b in chosen_t]
            + [TrialPair(a, b, False, label_policy) for a, b in chosen_n]
        )
    raise ValueError(f"policy must be 'all_pairs' or 'balanced', got {policy!r}")


class TextSurrogateSampler:
    """Seeded sampler of same-emotion text surrogates from a pool manifest.

    Draws uniformly among pool records sharing the canonical label; within
    one sampler's lifetime ids are not repeated until the label's pool is
    exhausted, after which it replenishes.
    """

    def __init__(self, pool: Manifest, seed: int = 0):
        self._pools: dict[str, list[str]] = {}
        for rec in pool:
            try:
                label = rec.canonical_label()
            except ExcludedLabelError:
                continue
            self._pools.setdefault(label, []).append(rec.utt_id)
        for ids in self._pools.values():
            ids.sort()
        self._rng = np.random.default_rng(seed)
        self._remaining = {label: list(ids) for label, ids in self._pools.items()}

    def sample(self, record: UtteranceRecord) -> str:
        label = record.canonical_label()
        pool = self._pools.get(label, [])
        if not pool:
            raise ManifestError(f"surrogate pool has no records labelled {label!r}")
        remaining = self._remaining[label]
        if not remaining:
            remaining = self._remaining[label] = list(pool)
        idx = int(self._rng.integers(0, len(remaining)))
        return remaining.pop(idx)


def sample_text_surrogate(record: UtteranceRecord, pool: Manifest, seed: int = 0) -> str:
    """One-shot uniform surrogate draw with the same canonical label."""
    return TextSurrogateSampler(pool, seed).sample(record)


def assign_surrogates(records: Iterable[UtteranceRecord], pool: Manifest,
                      seed: int = 0) -> "dict[str, str]":
    """Map each record's utt_id to a surrogate pool id, without replacement
    per label while the pool allows."""
    sampler = TextSurrogateSampler(pool, seed)
    return {rec.utt_id: sampler.sample(rec) for rec in records}


@dataclass
class EmbeddingRecord:
    utt_id: str
    modality: str  # speech | text | fused
    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float32).ravel()
        if self.vector.size == 0:
            raise ValueError(f"embedding {self.utt_id!r} is empty")
        if not np.all(np.isfinite(self.vector)):
            raise ValueError(f"embedding {self.utt_id!r} has non-finite entries")
        if self.modality not in ("speech", "text", "fused"):
            raise ValueError(f"unknown modality {self.modality!r}")

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


def fuse_embeddings(speech: EmbeddingRecord, text: EmbeddingRecord | None,
                    surrogate_map: "dict[str, str] | None" = None,
                    speech_only: bool = False) -> EmbeddingRecord:
    """Concatenate speech then text vectors for one utterance.

    The text record must carry the same utt_id or be the mapped surrogate;
    with speech_only=True a missing text side passes the speech vector
    through unchanged.
    """
    if text is None:
        if speech_only:
            return EmbeddingRecord(speech.utt_id, "speech", speech.vector)
        raise ValueError(f"no text embedding for {speech.utt_id!r} and speech_only not requested")
    expected = (surrogate_map or {}).get(speech.utt_id, speech.utt_id)
    if text.utt_id != expected:
        raise ValueError(
            f"text embedding id {text.utt_id!r} does not match {expected!r} "
            f"for utterance {speech.utt_id!r} (no surrogate mapping entry)"
        )
    fused = np.concatenate([speech.vector, text.vector])
    return EmbeddingRecord(speech.utt_id, "fused", fused)
