"""Canonical emotion grouping applied to raw corpus labels on ingest."""

from __future__ import annotations

CANONICAL_CLASSES = ("Happiness", "Sadness", "Fear/Surprise", "Anger/Disgust", "Neutral")

_LABEL_MAP = {
    "IEMOCAP": {
        "happiness": "Happiness", "excitement": "Happiness",
        "sadness": "Sadness",
        "fear": "Fear/Surprise", "surprise": "Fear/Surprise",
        "anger": "Anger/Disgust", "disgust": "Anger/Disgust", "frustration": "Anger/Disgust",
        "neutral": "Neutral",
    },
    "Crema-D": {
        "happiness": "Happiness", "excitement": "Happiness",
        "sadness": "Sadness",
        "fear": "Fear/Surprise",
        "anger": "Anger/Disgust", "disgust": "Anger/Disgust",
        "neutral": "Neutral",
    },
    "DailyDialog": {
        "happiness": "Happiness",
        "sadness": "Sadness",
        "fear": "Fear/Surprise", "surprise": "Fear/Surprise",
        "anger": "Anger/Disgust", "disgust": "Anger/Disgust",
        "other": "Neutral",
    },
    "other": {c.lower(): c for c in CANONICAL_CLASSES},
}


class LabelError(Exception):
    pass


class ExcludedLabelError(LabelError):
    pass


def canonicalize(corpus: str, raw_label: str) -> str:
    if corpus not in _LABEL_MAP:
        raise LabelError(f"unknown corpus {corpus!r}")
    key = raw_label.strip().lower()
    if corpus == "IEMOCAP" and key == "xxx":
        raise ExcludedLabelError("label 'xxx' (no annotator agreement) is excluded")
    table = _LABEL_MAP[corpus]
    if key not in table:
        raise LabelError(f"unknown label {raw_label!r} for corpus {corpus}")
    return table[key]
