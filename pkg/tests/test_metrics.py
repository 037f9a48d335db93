import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from amqc.errors import InvalidArgument
from amqc.metrics import (
    ConfusionMatrix,
    accuracy,
    build_report,
    cm_accumulate,
    correction_rate,
    defect_reduction_rate,
    f1_score,
    per_class_metrics,
    render_report,
    timing_metrics,
)


def brute_force(y_true, y_pred, c):
    """Per-sample counting, independent of the confusion matrix."""
    tp = fp = fn = 0
    for t, p in zip(y_true, y_pred):
        if t == c and p == c:
            tp += 1
        elif t != c and p == c:
            fp += 1
        elif t == c and p != c:
            fn += 1
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return prec, rec, f1


def test_accumulate_hand_tally():
    cm = ConfusionMatrix(4)
    for t, p in [(0, 1), (1, 1), (1, 0)]:
        cm_accumulate(cm, t, p)
    assert cm.counts[0, 1] == 1 and cm.counts[1, 1] == 1 and cm.counts[1, 0] == 1
    assert cm.total == 3


def test_all_correct_is_diagonal():
    cm = ConfusionMatrix.from_labels([0, 1, 2, 3, 3], [0, 1, 2, 3, 3])
    assert np.array_equal(cm.counts, np.diag(np.diag(cm.counts)))
    assert accuracy(cm) == 1.0


def test_one_call_total_one():
    assert ConfusionMatrix(4).add(2, 3).total == 1


def test_out_of_range_class_rejected():
    with pytest.raises(InvalidArgument):
        ConfusionMatrix(4).add(4, 0)


def test_recall_crack_row():
    cm = ConfusionMatrix(4)
    cm.counts[0, 0] = 49
    cm.counts[0, 2] = 1
    assert per_class_metrics(cm, 0)[1] == pytest.approx(0.98, abs=1e-12)


def test_f1_of_reported_precision_recall():
    assert f1_score(0.96, 0.98) == pytest.approx(0.9698969072, abs=1e-9)
    assert round(f1_score(0.96, 0.98), 2) == 0.97


def test_empty_matrix_metrics_zero():
    assert per_class_metrics(ConfusionMatrix(4), 1) == (0.0, 0.0, 0.0)
    with pytest.raises(InvalidArgument):
        accuracy(ConfusionMatrix(4))


def test_accuracy_9954_of_10000():
    cm = ConfusionMatrix(4)
    cm.counts[0, 0] = 9954
    cm.counts[1, 0] = 46
    assert accuracy(cm) == pytest.approx(0.9954, abs=1e-15)


def test_zero_diagonal_accuracy():
    assert accuracy(ConfusionMatrix.from_labels([0, 1], [1, 0])) == 0.0


@pytest.mark.parametrize("total_ms,frames,mean,fps", [(1000, 10, 100.0, 10.0)])
def test_timing(total_ms, frames, mean, fps):
    assert timing_metrics(total_ms, frames) == (mean, fps)


def test_timing_from_table_latency():
    _, fps = timing_metrics(32.4, 1)
    assert fps == pytest.approx(30.864197530864, abs=1e-9)


@given(st.floats(1e-3, 1e6), st.integers(1, 10**6))
def test_timing_identity(total_ms, frames):
    mean, fps = timing_metrics(total_ms, frames)
    assert mean * fps == pytest.approx(1000.0, rel=1e-12)


def test_timing_errors():
    with pytest.raises(InvalidArgument):
        timing_metrics(10.0, 0)


def test_defect_reduction():
    assert defect_reduction_rate(100, 27) == 73.0
    assert defect_reduction_rate(5, 5) == 0.0
    assert defect_reduction_rate(50, 75) == -50.0
    with pytest.raises(InvalidArgument):
        defect_reduction_rate(0, 3)


@given(st.floats(1e-6, 1e9))
def test_reduction_to_zero_is_100(before):
    assert defect_reduction_rate(before, 0) == 100.0


def test_correction_rate():
    assert correction_rate(89, 100) == 89.0
    assert correction_rate(0, 0) == 0.0
    assert correction_rate(3, 4) == 75.0
    with pytest.raises(InvalidArgument):
        correction_rate(5, 4)


def test_oracle_equivalence_random_streams():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        n = int(rng.integers(1, 501))
        y_true = rng.integers(0, 4, n)
        y_pred = np.where(rng.random(n) < 0.7, y_true, rng.integers(0, 4, n))
        cm = ConfusionMatrix.from_labels(y_true, y_pred)
        for c in range(4):
            assert np.allclose(per_class_metrics(cm, c), brute_force(y_true, y_pred, c),
                               atol=1e-12, rtol=0)
        assert abs(accuracy(cm) - np.mean(y_true == y_pred)) <= 1e-12


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=200))
def test_metric_bounds(pairs):
    cm = ConfusionMatrix.from_labels(*zip(*pairs))
    for c in range(4):
        p, r, f1 = per_class_metrics(cm, c)
        assert 0 <= p <= 1 and 0 <= r <= 1 and 0 <= f1 <= 1
        if p > 0 and r > 0:
            assert min(p, r) - 1e-12 <= f1 <= max(p, r) + 1e-12
    assert 0 <= accuracy(cm) <= 1


def _report():
    rng = np.random.default_rng(3)
    y = rng.integers(0, 4, 120)
    pred = np.where(rng.random(120) < 0.9, y, (y + 1) % 4)
    return build_report(ConfusionMatrix.from_labels(y, pred), timing={"mean_ms": 12.5, "fps": 80.0})


def test_render_deterministic_and_layout():
    text1, jsonl1 = render_report(_report())
    text2, jsonl2 = render_report(_report())
    assert text1 == text2 and jsonl1 == jsonl2
    lines = text1.splitlines()
    assert lines[0].split() == ["Label", "Class", "precision", "Recall", "F1-score", "Test", "Sample"]
    data_rows = lines[2:7]
    assert [r.split()[0] for r in data_rows] == ["Crack", "Pinhole", "Hole", "Spatter", "Macro"]


def test_render_precision_rules():
    report = _report()
    text, jsonl = render_report(report)
    records = [json.loads(line) for line in jsonl.splitlines()]
    assert records[0]["precision"] == report.classes[0].precision  # full precision
    assert f"{report.classes[0].precision:.2f}" in text.splitlines()[2]
    assert sum(r["support"] for r in records if r["kind"] == "class") == report.total
