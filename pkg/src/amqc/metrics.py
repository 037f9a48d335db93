"""Classification, timing and digital-twin metrics.

All ratios whose denominator is zero evaluate to 0.0 (the one exception is
``accuracy`` on an empty matrix, which has no meaningful value and raises).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from amqc import CLASS_NAMES
from amqc.errors import InvalidArgument


def _ratio(num, den):
    return float(num) / float(den) if den else 0.0


class ConfusionMatrix:
    """k x k count table; rows are true classes, columns predicted classes."""

    def __init__(self, k=4, counts=None):
        if counts is None:
            counts = np.zeros((k, k), dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (k, k):
            raise InvalidArgument(f"counts must be {k}x{k}, got {counts.shape}")
        if (counts < 0).any():
            raise InvalidArgument("confusion counts must be nonnegative")
        self.k = k
        self.counts = counts.copy()

    @classmethod
    def from_labels(cls, y_true, y_pred, k=4):
        cm = cls(k)
        for t, p in zip(y_true, y_pred):
            cm.add(t, p)
        return cm

    def add(self, true_class, predicted_class):
        t, p = int(true_class), int(predicted_class)
        if not (0 <= t < self.k and 0 <= p < self.k):
            raise InvalidArgument(
                f"class index out of range for k={self.k}: true={t}, predicted={p}")
        self.counts[t, p] += 1
        return self

    @property
    def total(self):
        return int(self.counts.sum())

    def __eq__(self, other):
        return (isinstance(other, ConfusionMatrix) and self.k == other.k
                and np.array_equal(self.counts, other.counts))

    def __repr__(self):
        return f"ConfusionMatrix(k={self.k}, total={self.total})"


def cm_accumulate(cm, true_class, predicted_class):
    return cm.add(true_class, predicted_class)


def per_class_metrics(cm, c):
    """One-vs-rest (precision, recall, f1) for class ``c``."""
    counts = cm.counts
    tp = counts[c, c]
    fp = counts[:, c].sum() - tp
    fn = counts[c, :].sum() - tp
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return precision, recall, f1_score(precision, recall)


def f1_score(precision, recall):
    return _ratio(2.0 * precision * recall, precision + recall)


def accuracy(cm):
    total = cm.total
    if total == 0:
        raise InvalidArgument("accuracy of an empty confusion matrix is undefined")
    return float(np.trace(cm.counts)) / total


def timing_metrics(total_ms, frames):
    """Mean per-frame latency (ms) and throughput (frames/s)."""
    if frames < 1:
        raise InvalidArgument(f"frames must be >= 1, got {frames}")
    if total_ms <= 0:
        raise InvalidArgument(f"total_ms must be > 0, got {total_ms}")
    mean_ms = total_ms / frames
    return mean_ms, 1000.0 / mean_ms


def defect_reduction_rate(before, after):
    if before <= 0:
        raise InvalidArgument(f"defects before adjustment must be > 0, got {before}")
    if after < 0:
        raise InvalidArgument(f"defects after adjustment must be >= 0, got {after}")
    return (before - after) / before * 100.0


def correction_rate(successful, total_actions):
    if total_actions < 0 or successful < 0:
        raise InvalidArgument("counts must be nonnegative")
    if successful > total_actions:
        raise InvalidArgument(
            f"successful adjustments ({successful}) exceed actions taken ({total_actions})")
    return _ratio(100.0 * successful, total_actions)


@dataclass
class ClassMetrics:
    label: str
    class_id: int
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    classes: list[ClassMetrics]
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    total: int
    timing: dict | None = None
    provenance: dict = field(default_factory=dict)


def build_report(cm, class_names=CLASS_NAMES, timing=None, provenance=None):
    classes = []
    for c in range(cm.k):
        p, r, f1 = per_class_metrics(cm, c)
        classes.append(ClassMetrics(class_names[c], c, p, r, f1, int(cm.counts[c].sum())))
    k = max(cm.k, 1)
    return MetricsReport(
        classes=classes,
        accuracy=accuracy(cm) if cm.total else 0.0,
        macro_precision=sum(m.precision for m in classes) / k,
        macro_recall=sum(m.recall for m in classes) / k,
        macro_f1=sum(m.f1 for m in classes) / k,
        total=cm.total,
        timing=timing,
        provenance=dict(provenance or {}),
    )


def render_report(report):
    """Return ``(text_table, jsonl)``.

    The text table uses 2 decimals; the JSONL keeps full float precision.
    One JSONL line per class, then a ``summary`` line.
    """
    header = ("Label", "Class", "precision", "Recall", "F1-score", "Test Sample")
    rows = [(m.label.capitalize(), str(m.class_id), f"{m.precision:.2f}",
             f"{m.recall:.2f}", f"{m.f1:.2f}", str(m.support)) for m in report.classes]
    rows.append(("Macro avg", "-", f"{report.macro_precision:.2f}",
                 f"{report.macro_recall:.2f}", f"{report.macro_f1:.2f}", str(report.total)))
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*header), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*r) for r in rows]
    lines.append(f"Accuracy: {report.accuracy:.4f} ({report.total} samples)")
    if report.timing:
        lines.append(f"Latency: {report.timing['mean_ms']:.2f} ms/frame, "
                     f"{report.timing['fps']:.2f} FPS")
    text = "\n".join(lines) + "\n"

    records = [{"kind": "class", "label": m.label, "class_id": m.class_id,
                "precision": m.precision, "recall": m.recall, "f1": m.f1,
                "support": m.support} for m in report.classes]
    summary = {"kind": "summary", "accuracy": report.accuracy,
               "macro_precision": report.macro_precision, "macro_recall": report.macro_recall,
               "macro_f1": report.macro_f1, "total": report.total}
    if report.timing:
        summary["timing"] = report.timing
    if report.provenance:
        summary["provenance"] = report.provenance
    records.append(summary)
    jsonl = "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in records)
    return text, jsonl
