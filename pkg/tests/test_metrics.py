import numpy as np
import pytest

from spamdetect.metrics import (
    ConfusionMatrix, MetricsReport, accuracy, confusion, f1, precision, recall,
)

# Reported best rows: (dataset, batch, distribution, f1, accuracy, precision, recall)
PUBLISHED_ROWS = [
    ("SpamAssassin", 128, "70:15:15", 0.9764, 0.98, 0.96, 0.99),
    ("Enron", 128, "70:15:15", 0.9720, 0.97, 0.96, 0.98),
    ("LingSpam", 512, "80:10:10", 0.9400, 0.98, 0.90, 0.98),
    ("SpamText", 128, "80:10:10", 0.9396, 0.98, 0.95, 0.93),
    ("Combined", 128, "70:15:15", 0.9608, 0.97, 0.95, 0.97),
]


def test_perfect_prediction():
    cm = confusion([1, 1, 0, 0, 0], [1, 1, 0, 0, 0])
    assert (cm.tp, cm.tn, cm.fp, cm.fn) == (2, 3, 0, 0)


def test_all_wrong():
    cm = confusion([1, 0], [0, 1])
    assert (cm.fp, cm.fn, cm.tp, cm.tn) == (1, 1, 0, 0)


def test_length_mismatch():
    with pytest.raises(ValueError):
        confusion([1], [1, 0])


def test_counts_match_brute_force_tally():
    rng = np.random.default_rng(7)
    preds = rng.integers(0, 2, 1000).tolist()
    labels = rng.integers(0, 2, 1000).tolist()
    cm = confusion(preds, labels)
    # independent per-sample tally
    tp = sum(1 for p, y in zip(preds, labels) if p == 1 and y == 1)
    tn = sum(1 for p, y in zip(preds, labels) if p == 0 and y == 0)
    fp = sum(1 for p, y in zip(preds, labels) if p == 1 and y == 0)
    fn = sum(1 for p, y in zip(preds, labels) if p == 0 and y == 1)
    assert (cm.tp, cm.tn, cm.fp, cm.fn) == (tp, tn, fp, fn)
    assert cm.total == 1000
    correct = sum(1 for p, y in zip(preds, labels) if p == y)
    assert abs(accuracy(cm) - correct / 1000) < 1e-12


def test_accuracy_values():
    assert accuracy(ConfusionMatrix(tn=3, fp=1, fn=0, tp=2)) == pytest.approx(5 / 6)
    assert accuracy(ConfusionMatrix(tn=4, fp=0, fn=0, tp=4)) == 1.0
    assert accuracy(ConfusionMatrix(tn=0, fp=4, fn=4, tp=0)) == 0.0
    with pytest.raises(ValueError):
        accuracy(ConfusionMatrix(0, 0, 0, 0))


def test_recall_values():
    assert recall(ConfusionMatrix(tn=0, fp=0, fn=0, tp=2)) == 1.0
    assert recall(ConfusionMatrix(tn=0, fp=0, fn=5, tp=0)) == 0.0
    assert recall(ConfusionMatrix(tn=9, fp=1, fn=0, tp=0)) == 0.0  # tp+fn == 0


def test_precision_values():
    assert precision(ConfusionMatrix(tn=0, fp=1, fn=0, tp=2)) == pytest.approx(2 / 3)
    assert precision(ConfusionMatrix(tn=0, fp=0, fn=3, tp=5)) == 1.0
    assert precision(ConfusionMatrix(tn=9, fp=0, fn=1, tp=0)) == 0.0  # tp+fp == 0


def test_f1_values():
    assert f1(0.95, 0.97) == pytest.approx(0.9598958333333334)
    assert f1(0.5, 0.5) == 0.5
    assert f1(1.0, 0.0) == 0.0


def test_f1_bounds():
    rng = np.random.default_rng(11)
    for _ in range(300):
        p, r = rng.random(2)
        score = f1(p, r)
        assert min(p, r) - 1e-12 <= score <= max(p, r) + 1e-12
        assert score <= (p + r) / 2 + 1e-12


def test_permutation_invariance():
    rng = np.random.default_rng(3)
    preds = rng.integers(0, 2, 200).tolist()
    labels = rng.integers(0, 2, 200).tolist()
    base = MetricsReport.from_predictions(preds, labels)
    perm = rng.permutation(200)
    shuffled = MetricsReport.from_predictions(
        [preds[i] for i in perm], [labels[i] for i in perm])
    assert base == shuffled


def test_published_f1_consistent_with_precision_recall():
    # reported precision/recall are two-decimal roundings, so allow 0.011
    for _, _, _, f1_reported, _, p, r in PUBLISHED_ROWS:
        assert abs(f1(p, r) - f1_reported) < 0.011


def test_report_json_round_trip():
    report = MetricsReport.from_predictions([1, 0, 1, 1], [1, 0, 0, 1])
    back = MetricsReport.from_dict(report.to_dict())
    assert back == report
