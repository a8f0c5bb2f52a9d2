"""Closed-set identification metrics.

Rank-1 accuracy is the fraction of probe clips whose top-scoring identity
equals the true identity, reported as a percentage. Counting is done with
exact rational arithmetic so that e.g. 37/74 prints as 50.0 and not
49.999999...
"""

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


@dataclass(frozen=True)
class PredictionRecord:
    """One probe clip's outcome: true label, predicted label, class scores."""

    clip_id: str
    true_label: int
    predicted_label: int
    probabilities: tuple[float, ...]

    def __post_init__(self):
        probs = np.asarray(self.probabilities, dtype=np.float64)
        if probs.ndim != 1 or probs.size < 2:
            raise ValueError("probabilities must be a vector over >= 2 classes")
        if not np.all(np.isfinite(probs)):
            raise ValueError(f"{self.clip_id}: non-finite probabilities")
        object.__setattr__(self, "probabilities", tuple(float(p) for p in probs))
        if not 0 <= self.true_label < probs.size:
            raise ValueError(f"{self.clip_id}: true_label out of range")
        if not 0 <= self.predicted_label < probs.size:
            raise ValueError(f"{self.clip_id}: predicted_label out of range")
        if self.predicted_label != int(np.argmax(probs)):
            raise ValueError(
                f"{self.clip_id}: predicted_label {self.predicted_label} is not "
                f"the argmax of the probability vector"
            )

    @property
    def hit(self):
        return self.predicted_label == self.true_label


def rank1_accuracy(records):
    """Exact rank-1 accuracy in percent: 100 * hits / total."""
    records = list(records)
    if not records:
        raise ValueError("no prediction records")
    hits = sum(1 for r in records if r.hit)
    return float(Fraction(100) * Fraction(hits, len(records)))


def rank_k_accuracy(records, k):
    """Percent of records whose true label is within the top-k scores.

    Ties are broken pessimistically: a label only counts as retrieved at
    rank k if strictly fewer than k labels score >= its score (with equal
    scores at the boundary resolved by lower class index first, matching
    argsort order).
    """
    records = list(records)
    if not records:
        raise ValueError("no prediction records")
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = 0
    for r in records:
        probs = np.asarray(r.probabilities)
        order = np.argsort(-probs, kind="stable")
        if r.true_label in order[:k]:
            hits += 1
    return float(Fraction(100) * Fraction(hits, len(records)))


@dataclass(frozen=True)
class EvaluationReport:
    """Aggregate identification result over a probe set."""

    rank1: float
    n_hits: int
    n_total: int
    num_classes: int
    per_subject_accuracy: dict
    confusion_matrix: tuple

    def as_dict(self):
        return {
            "rank1": self.rank1,
            "n_hits": self.n_hits,
            "n_total": self.n_total,
            "num_classes": self.num_classes,
            "per_subject_accuracy": {str(k): v for k, v in
                                     sorted(self.per_subject_accuracy.items())},
            "confusion_matrix": [list(row) for row in self.confusion_matrix],
        }


def build_report(records):
    """Summarize records into rank-1, per-subject accuracy and a confusion
    matrix (rows = true label, columns = predicted label)."""
    records = list(records)
    if not records:
        raise ValueError("no prediction records")
    k = len(records[0].probabilities)
    for r in records:
        if len(r.probabilities) != k:
            raise ValueError("records disagree on the number of classes")
    confusion = np.zeros((k, k), dtype=np.int64)
    for r in records:
        confusion[r.true_label, r.predicted_label] += 1
    per_subject = {}
    for label in range(k):
        total = int(confusion[label].sum())
        if total:
            per_subject[label] = float(Fraction(100) * Fraction(
                int(confusion[label, label]), total))
    hits = int(np.trace(confusion))
    return EvaluationReport(
        rank1=float(Fraction(100) * Fraction(hits, len(records))),
        n_hits=hits,
        n_total=len(records),
        num_classes=k,
        per_subject_accuracy=per_subject,
        confusion_matrix=tuple(tuple(int(v) for v in row) for row in confusion),
    )


def report_from_labels(true_labels, predicted_labels, num_classes):
    """Build an EvaluationReport from bare label pairs.

    Used where predictions don't come from a single probability vector
    (e.g. hard ensemble voting, whose winner need not be the mean's argmax).
    """
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted_labels = np.asarray(predicted_labels, dtype=np.int64)
    if true_labels.shape != predicted_labels.shape or true_labels.ndim != 1:
        raise ValueError("label arrays must be matching 1-D vectors")
    if true_labels.size == 0:
        raise ValueError("no predictions")
    k = int(num_classes)
    for name, arr in (("true", true_labels), ("predicted", predicted_labels)):
        if arr.min() < 0 or arr.max() >= k:
            raise ValueError(f"{name} labels out of range for {k} classes")
    confusion = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        confusion[t, p] += 1
    per_subject = {}
    for label in range(k):
        total = int(confusion[label].sum())
        if total:
            per_subject[label] = float(Fraction(100) * Fraction(
                int(confusion[label, label]), total))
    hits = int(np.trace(confusion))
    return EvaluationReport(
        rank1=float(Fraction(100) * Fraction(hits, true_labels.size)),
        n_hits=hits,
        n_total=int(true_labels.size),
        num_classes=k,
        per_subject_accuracy=per_subject,
        confusion_matrix=tuple(tuple(int(v) for v in row) for row in confusion),
    )


def records_from_probs(clip_ids, true_labels, probs):
    """Build PredictionRecords from a probability matrix (N, K)."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("probs must be (N, K)")
    if not (len(clip_ids) == len(true_labels) == probs.shape[0]):
        raise ValueError("clip_ids, true_labels and probs disagree on length")
    return [
        PredictionRecord(str(cid), int(y), int(np.argmax(p)), tuple(p))
        for cid, y, p in zip(clip_ids, true_labels, probs)
    ]


def evaluate_model(net, clips, labels, batch_size=16):
    """Run a trained SlowFast model over probe clips and build a report."""
    from . import model as model_mod

    probs = model_mod.predict_proba_batch(net, clips, batch_size=batch_size)
    clip_ids = [getattr(c, "clip_id", str(i)) for i, c in enumerate(clips)]
    records = records_from_probs(clip_ids, labels, probs)
    return build_report(records), records


def format_report(report, label_names=None):
    """Human-readable multi-line summary of an EvaluationReport."""
    lines = [
        f"rank-1 accuracy: {report.rank1:.2f}%  ({report.n_hits}/{report.n_total})",
        f"classes: {report.num_classes}",
        "per-subject accuracy:",
    ]
    for label, acc in sorted(report.per_subject_accuracy.items()):
        name = label_names.get(label, str(label)) if label_names else str(label)
        total = sum(report.confusion_matrix[label])
        lines.append(f"  {name:>12s}: {acc:6.2f}%  (n={total})")
    return "\n".join(lines)


def save_report(report, path):
    with open(path, "w") as fh:
        json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_report(path):
    with open(path) as fh:
        d = json.load(fh)
    return EvaluationReport(
        rank1=float(d["rank1"]),
        n_hits=int(d["n_hits"]),
        n_total=int(d["n_total"]),
        num_classes=int(d["num_classes"]),
        per_subject_accuracy={int(k): float(v)
                              for k, v in d["per_subject_accuracy"].items()},
        confusion_matrix=tuple(tuple(int(v) for v in row)
                               for row in d["confusion_matrix"]),
    )
