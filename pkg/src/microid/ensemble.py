"""Ensemble voting over multiple trained identification models.

Soft voting averages the members' class-probability vectors and takes the
argmax; hard voting takes the modal member prediction, breaking ties toward
the tied class with the highest mean probability and then the lowest class
index. Both report the mean vector as the combined score, and neither
depends on member order.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evaluation
from . import model as model_mod

POLICIES = ("soft", "hard")
PROB_SUM_TOL = 1e-6
SPEC_FORMAT = "microid-ensemble"


@dataclass(frozen=True)
class EnsembleSpec:
    """Checkpoint paths plus the combination policy."""

    member_checkpoints: tuple
    policy: str = "soft"

    def __post_init__(self):
        object.__setattr__(self, "member_checkpoints",
                           tuple(str(p) for p in self.member_checkpoints))
        if len(self.member_checkpoints) < 2:
            raise ValueError("an ensemble needs at least 2 members")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")


def _validate_member_probs(member_probs):
    if len(member_probs) == 0:
        raise ValueError("empty member list")
    rows = [np.asarray(p, dtype=np.float64) for p in member_probs]
    k = rows[0].shape
    for i, row in enumerate(rows):
        if row.ndim != 1 or row.shape != k:
            raise ValueError(f"member {i}: probability vector shape {row.shape} != {k}")
        if not np.all(np.isfinite(row)) or np.any(row < 0):
            raise ValueError(f"member {i}: probabilities must be finite and >= 0")
        if abs(float(row.sum()) - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"member {i}: probabilities sum to {row.sum():.8f}, not 1")
    return np.stack(rows)


def ensemble_predict(member_probs, policy="soft"):
    """Combine per-member probability vectors into (predicted class, mean)."""
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    probs = _validate_member_probs(member_probs)
    mean = probs.mean(axis=0)
    if policy == "soft":
        return int(np.argmax(mean)), mean
    votes = np.argmax(probs, axis=1)
    counts = np.bincount(votes, minlength=probs.shape[1])
    top = counts.max()
    best = None
    for cls in range(probs.shape[1]):
        if counts[cls] == top and (best is None or mean[cls] > mean[best]):
            best = cls
    return int(best), mean


def load_members(spec):
    """Load all member checkpoints, enforcing shape compatibility."""
    nets = [model_mod.load_checkpoint(p) for p in spec.member_checkpoints]
    first = nets[0].config
    for path, net in zip(spec.member_checkpoints, nets):
        c = net.config
        if c.num_classes != first.num_classes or c.input_shape != first.input_shape:
            raise ValueError(
                f"{path}: member shape ({c.num_classes} classes, input "
                f"{c.input_shape}) incompatible with ({first.num_classes}, "
                f"{first.input_shape})")
    return nets


def predict_proba_members(nets, clips, batch_size=16):
    """Stack member probabilities into (M, N, K)."""
    return np.stack([model_mod.predict_proba_batch(net, clips, batch_size=batch_size)
                     for net in nets])


def evaluate_members(nets, clips, labels, policy="soft", batch_size=16):
    """Combine already-loaded member models over a probe set.

    Returns (report, predictions) where predictions is a list of
    (clip_id, true_label, predicted_label, mean_probability_vector).
    """
    stacked = predict_proba_members(nets, clips, batch_size=batch_size)
    clip_ids = [getattr(c, "clip_id", str(i)) for i, c in enumerate(clips)]
    predictions = []
    for j, (cid, y) in enumerate(zip(clip_ids, labels)):
        pred, mean = ensemble_predict(stacked[:, j], policy=policy)
        predictions.append((cid, int(y), pred, mean))
    report = evaluation.report_from_labels(
        [p[1] for p in predictions], [p[2] for p in predictions],
        num_classes=stacked.shape[2])
    return report, predictions


def evaluate_ensemble(spec, clips, labels, batch_size=16):
    """Load an EnsembleSpec's members and evaluate them on a probe set."""
    nets = load_members(spec)
    report, _ = evaluate_members(nets, clips, labels, policy=spec.policy,
                                 batch_size=batch_size)
    return report


def save_spec(spec, path):
    payload = {
        "format": SPEC_FORMAT,
        "version": 1,
        "members": list(spec.member_checkpoints),
        "policy": spec.policy,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    return path


def load_spec(path):
    with open(path) as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict) or payload.get("format") != SPEC_FORMAT:
        raise ValueError(f"{path}: not an ensemble spec")
    members = payload["members"]
    base = Path(path).resolve().parent
    resolved = [str(p) if Path(p).is_absolute() else str(base / p) for p in members]
    return EnsembleSpec(member_checkpoints=tuple(resolved),
                        policy=payload.get("policy", "soft"))
