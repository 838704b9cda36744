"""Evaluation: equal error rate over trial scores, accuracy and F1 over predictions."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class MetricsError(Exception):
    pass


@dataclass
class EerResult:
    eer: float
    threshold: float


def compute_eer(target_scores, nontarget_scores) -> EerResult:
    """Equal error rate with linear interpolation between operating points.

    Sweeps thresholds over the observed score values; at threshold t a
    nontarget scoring >= t is a false accept and a target scoring < t is a
    false reject.  The EER is where the two rates cross, interpolated
    linearly along the segment between the adjacent operating points.
    """
    tar = np.asarray(sorted(target_scores), dtype=np.float64)
    non = np.asarray(sorted(nontarget_scores), dtype=np.float64)
    if tar.size == 0 or non.size == 0:
        raise MetricsError(
            f"need both trial kinds: {tar.size} target, {non.size} nontarget"
        )
    if not (np.all(np.isfinite(tar)) and np.all(np.isfinite(non))):
        raise MetricsError("non-finite trial scores")

    # operating points at every distinct score, plus one beyond each end
    values = np.unique(np.concatenate([tar, non]))
    thresholds = np.concatenate([[values[0] - 1.0], values, [values[-1] + 1.0]])
    far = (non.size - np.searchsorted(non, thresholds, side="left")) / non.size
    frr = np.searchsorted(tar, thresholds, side="left") / tar.size

    diff = far - frr  # starts >= 0 (far 1, frr 0), ends <= 0
    for i in range(len(thresholds) - 1):
        if diff[i] >= 0 and diff[i + 1] <= 0:
            if diff[i] == diff[i + 1]:
                return EerResult(float(far[i]), float(thresholds[i]))
            s = diff[i] / (diff[i] - diff[i + 1])
            eer = far[i] + s * (far[i + 1] - far[i])
            thr = thresholds[i] + s * (thresholds[i + 1] - thresholds[i])
            return EerResult(float(eer), float(thr))
    raise MetricsError("no crossing found; scores are degenerate")  # pragma: no cover


def compute_eer_from_trials(trials) -> EerResult:
    """trials: iterable of objects with .score and .is_target, or (score, is_target)."""
    tar, non = [], []
    for t in trials:
        score, is_target = (t.score, t.is_target) if hasattr(t, "score") else t
        (tar if is_target else non).append(float(score))
    return compute_eer(tar, non)


@dataclass
class ScoredTrial:
    id1: str
    id2: str
    score: float
    is_target: bool


@dataclass
class ClassificationReport:
    accuracy: float
    macro_f1: float
    weighted_f1: float
    per_class: dict
    n: int


def compute_classification_metrics(preds, golds, classes) -> ClassificationReport:
    """Accuracy plus per-class/macro/weighted F1.

    A class with zero precision+recall contributes F1 = 0; classes absent
    from the gold labels still enter the macro average (as 0 unless
    predicted perfectly vacuously, i.e. never).
    """
    preds = list(preds)
    golds = list(golds)
    if len(preds) != len(golds):
        raise MetricsError(f"length mismatch: {len(preds)} predictions, {len(golds)} golds")
    if not preds:
        raise MetricsError("empty prediction list")
    class_set = list(classes)
    index = {c: i for i, c in enumerate(class_set)}
    for seq, name in ((preds, "prediction"), (golds, "gold")):
        for lab in seq:
            if lab not in index:
                raise MetricsError(f"unknown {name} label {lab!r}")

    k = len(class_set)
    confusion = np.zeros((k, k), dtype=np.int64)
    for p, g in zip(preds, golds):
        confusion[index[g], index[p]] += 1

    n = len(preds)
    accuracy = float(np.trace(confusion)) / n
    per_class = {}
    f1s = np.zeros(k)
    support = confusion.sum(axis=1)
    for c, i in index.items():
        tp = confusion[i, i]
        fp = confusion[:, i].sum() - tp
        fn = confusion[i, :].sum() - tp
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        f1s[i] = f1
        per_class[str(c)] = {
            "precision": float(precision),
            "recall": float(recall),
            "f1": float(f1),
            "support": int(support[i]),
        }
    macro = float(f1s.mean())
    weighted = float((f1s * support).sum() / n)
    return ClassificationReport(accuracy=accuracy, macro_f1=macro, weighted_f1=weighted,
                                per_class=per_class, n=n)


def report_json(classification: ClassificationReport | None = None,
                eer: EerResult | None = None, n_trials: int = 0) -> dict:
    out: dict = {}
    if classification is not None:
        out.update(
            accuracy=classification.accuracy,
            macro_f1=classification.macro_f1,
            weighted_f1=classification.weighted_f1,
            per_class=classification.per_class,
            n=classification.n,
        )
    if eer is not None:
        out.update(eer=eer.eer, threshold=eer.threshold, n_trials=n_trials)
    return out


def report_table(report: dict) -> str:
    """Plain-text rendering of a metrics report for stdout."""
    lines = []
    if "accuracy" in report:
        lines.append(f"{'accuracy':<14}{report['accuracy']:.4f}")
        lines.append(f"{'macro F1':<14}{report['macro_f1']:.4f}")
        lines.append(f"{'weighted F1':<14}{report['weighted_f1']:.4f}")
        lines.append("")
        lines.append(f"{'class':<16}{'prec':>8}{'recall':>8}{'f1':>8}{'support':>9}")
        for name, row in report["per_class"].items():
            lines.append(
                f"{name:<16}{row['precision']:>8.4f}{row['recall']:>8.4f}"
                f"{row['f1']:>8.4f}{row['support']:>9d}"
            )
    if "eer" in report:
        if lines:
            lines.append("")
        lines.append(f"{'EER':<14}{report['eer']:.4f}")
        lines.append(f"{'threshold':<14}{report['threshold']:.6f}")
        lines.append(f"{'trials':<14}{report['n_trials']}")
    return "\n".join(lines)


def dump_report(path: str, report: dict) -> None:
    from .formats import write_text_atomic

    write_text_atomic(path, json.dumps(report, indent=2, sort_keys=True) + "\n")
