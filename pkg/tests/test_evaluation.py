import json

import numpy as np
import pytest

from microid import evaluation


def _record(cid, true, probs):
    probs = np.asarray(probs, dtype=float)
    return evaluation.PredictionRecord(
        clip_id=cid,
        true_label=true,
        predicted_label=int(np.argmax(probs)),
        probabilities=tuple(probs.tolist()),
    )


def _random_records(rng, n, k):
    recs = []
    for i in range(n):
        p = rng.random(k)
        p /= p.sum()
        recs.append(_record(f"c{i:04d}", int(rng.integers(k)), p))
    return recs


def _brute_force_rank1(records):
    """Deliberately naive re-count: walk the list, compare argmax by hand."""
    hits = 0
    for r in records:
        best, best_p = 0, r.probabilities[0]
        for j, p in enumerate(r.probabilities):
            if p > best_p:
                best, best_p = j, p
        if best == r.true_label:
            hits += 1
    return 100.0 * hits / len(records)


# ------------------------------------------------------------- records

def test_record_rejects_mismatched_argmax():
    with pytest.raises(ValueError, match="argmax"):
        evaluation.PredictionRecord("c", 0, 1, (0.9, 0.1))


def test_record_rejects_bad_labels():
    with pytest.raises(ValueError):
        _record("c", 5, (0.9, 0.1))
    with pytest.raises(ValueError):
        evaluation.PredictionRecord("c", -1, 0, (0.9, 0.1))


def test_record_rejects_nonfinite_and_short_vectors():
    with pytest.raises(ValueError):
        _record("c", 0, (1.0,))
    with pytest.raises(ValueError):
        evaluation.PredictionRecord("c", 0, 0, (float("nan"), 0.5))


# ------------------------------------------------------------- rank-1

def test_rank1_hand_cases():
    recs = [
        _record("a", 0, (0.9, 0.1)),
        _record("b", 1, (0.2, 0.8)),
        _record("c", 0, (0.4, 0.6)),
        _record("d", 1, (0.3, 0.7)),
    ]
    assert evaluation.rank1_accuracy(recs) == 75.0
    assert evaluation.rank1_accuracy(recs[:2]) == 100.0


def test_rank1_matches_brute_force():
    rng = np.random.default_rng(42)
    for _ in range(50):
        recs = _random_records(rng, int(rng.integers(1, 40)), int(rng.integers(2, 7)))
        assert evaluation.rank1_accuracy(recs) == pytest.approx(
            _brute_force_rank1(recs), abs=1e-12)


def test_rank1_exact_fractions():
    # 1/3 is not float-representable; the percent must still be the closest
    # double to 100/3, not an accumulation artifact.
    recs = [_record("a", 0, (0.9, 0.1)),
            _record("b", 1, (0.9, 0.1)),
            _record("c", 1, (0.9, 0.1))]
    assert evaluation.rank1_accuracy(recs) == 100.0 / 3.0


def test_rank1_rejects_empty():
    with pytest.raises(ValueError):
        evaluation.rank1_accuracy([])


def test_rank_k():
    recs = [
        _record("a", 2, (0.5, 0.3, 0.2)),   # true class ranked 3rd
        _record("b", 1, (0.4, 0.35, 0.25)),  # ranked 2nd
        _record("c", 0, (0.6, 0.3, 0.1)),   # ranked 1st
    ]
    assert evaluation.rank_k_accuracy(recs, 1) == pytest.approx(100.0 / 3.0)
    assert evaluation.rank_k_accuracy(recs, 2) == pytest.approx(200.0 / 3.0)
    assert evaluation.rank_k_accuracy(recs, 3) == 100.0


# ------------------------------------------------------------- reports

def test_build_report_invariants():
    rng = np.random.default_rng(7)
    recs = _random_records(rng, 60, 4)
    report = evaluation.build_report(recs)
    cm = np.array(report.confusion_matrix)
    assert cm.shape == (4, 4)
    assert cm.sum() == 60
    assert np.trace(cm) == report.n_hits
    assert report.rank1 == evaluation.rank1_accuracy(recs)
    # rows are per-true-label totals
    for lbl in range(4):
        assert cm[lbl].sum() == sum(1 for r in recs if r.true_label == lbl)
    # weighted mean of per-subject accuracy reproduces overall rank-1
    weighted = sum(report.per_subject_accuracy[lbl] * cm[lbl].sum() for lbl in range(4))
    assert weighted / 60 == pytest.approx(report.rank1, abs=1e-9)


def test_build_report_order_invariant():
    rng = np.random.default_rng(11)
    recs = _random_records(rng, 30, 3)
    a = evaluation.build_report(recs)
    b = evaluation.build_report(list(reversed(recs)))
    assert a.confusion_matrix == b.confusion_matrix
    assert a.rank1 == b.rank1


def test_build_report_rejects_mixed_class_counts():
    recs = [_record("a", 2, (0.2, 0.3, 0.5)), _record("b", 0, (0.6, 0.4))]
    with pytest.raises(ValueError, match="classes"):
        evaluation.build_report(recs)


def test_report_from_labels_matches_build_report():
    rng = np.random.default_rng(3)
    recs = _random_records(rng, 40, 3)
    by_records = evaluation.build_report(recs)
    by_labels = evaluation.report_from_labels(
        [r.true_label for r in recs], [r.predicted_label for r in recs], 3)
    assert by_labels.confusion_matrix == by_records.confusion_matrix
    assert by_labels.rank1 == by_records.rank1
    assert by_labels.per_subject_accuracy == by_records.per_subject_accuracy


def test_report_json_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    recs = _random_records(rng, 25, 3)
    report = evaluation.build_report(recs)
    path = tmp_path / "report.json"
    evaluation.save_report(report, path)
    back = evaluation.load_report(path)
    assert back == report
    # file is ordinary JSON
    payload = json.loads(path.read_text())
    assert payload["n_total"] == 25


def test_format_report_mentions_key_numbers():
    recs = [_record("a", 0, (0.9, 0.1)), _record("b", 1, (0.2, 0.8))]
    report = evaluation.build_report(recs)
    text = evaluation.format_report(report, label_names={0: "s00", 1: "s01"})
    assert "100.00" in text
    assert "s01" in text
    assert "2" in text


def test_records_from_probs():
    probs = np.array([[0.7, 0.3], [0.1, 0.9]])
    recs = evaluation.records_from_probs(["x", "y"], [0, 0], probs)
    assert [r.predicted_label for r in recs] == [0, 1]
    assert recs[0].clip_id == "x"
    assert recs[1].true_label == 0
