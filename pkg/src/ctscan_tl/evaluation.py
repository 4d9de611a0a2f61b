"""Confusion matrices, one-vs-rest metrics and per-subset evaluation reports."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError

METRICS = ("precision", "recall", "f1", "specificity")


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray
    class_names: tuple

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.class_names = tuple(self.class_names)
        k = len(self.class_names)
        if self.counts.shape != (k, k):
            raise DataError(f"confusion matrix shape {self.counts.shape} does not match {k} classes")
        if (self.counts < 0).any():
            raise DataError("confusion matrix counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_dict(self):
        return {"class_names": list(self.class_names), "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["counts"]), d["class_names"])


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    specificity: float
    support: int
    degenerate: tuple = ()  # metrics whose ratio was 0/0 and were set to 0

    def to_dict(self):
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "specificity": self.specificity, "support": self.support,
                "degenerate": list(self.degenerate)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["precision"], d["recall"], d["f1"], d["specificity"], int(d["support"]),
                   tuple(d.get("degenerate", ())))


@dataclass
class SubsetResult:
    confusion: ConfusionMatrix
    metrics: dict
    accuracy: float

    def to_dict(self):
        return {"confusion_matrix": self.confusion.to_dict(),
                "metrics": {c: m.to_dict() for c, m in self.metrics.items()},
                "accuracy": self.accuracy}

    @classmethod
    def from_dict(cls, d):
        return cls(ConfusionMatrix.from_dict(d["confusion_matrix"]),
                   {c: ClassMetrics.from_dict(m) for c, m in d["metrics"].items()},
                   float(d["accuracy"]))


@dataclass
class EvaluationReport:
    class_names: tuple
    per_subset: list
    averages: dict = field(default=None)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        if self.averages is None:
            self.averages = average_reports(self.per_subset)

    def to_dict(self):
        return {"class_names": list(self.class_names),
                "per_subset": [s.to_dict() for s in self.per_subset],
                "averages": self.averages,
                "metadata": self.metadata}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, d):
        return cls(d["class_names"], [SubsetResult.from_dict(s) for s in d["per_subset"]],
                   d.get("averages"), d.get("metadata", {}))

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"cannot read evaluation report {path}: {exc}") from exc


def confusion_matrix(true_labels: Sequence[str], predicted_labels: Sequence[str],
                     class_names: Sequence[str]) -> ConfusionMatrix:
    if len(true_labels) != len(predicted_labels):
        raise DataError(f"{len(true_labels)} true labels but {len(predicted_labels)} predictions")
    index = {name: i for i, name in enumerate(class_names)}
    counts = np.zeros((len(class_names), len(class_names)), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        for label in (t, p):
            if label not in index:
                raise DataError(f"unknown label {label!r}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(counts, class_names)


def _ratio(num, den, name, flags):
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean; 0 when both are 0."""
    den = precision + recall
    return 2.0 * precision * recall / den if den > 0 else 0.0


def per_class_metrics(cm: ConfusionMatrix):
    """One-vs-rest metrics per class and overall accuracy.

    Returns ``(metrics, accuracy)`` where ``metrics`` maps class name to
    :class:`ClassMetrics`. Ratios with a zero denominator are reported as 0 and
    listed in ``ClassMetrics.degenerate``.
    """
    total = cm.total
    if total == 0:
        raise DataError("confusion matrix is empty")
    counts = cm.counts
    out = {}
    for c, name in enumerate(cm.class_names):
        tp = int(counts[c, c])
        fn = int(counts[c, :].sum()) - tp
        fp = int(counts[:, c].sum()) - tp
        tn = total - tp - fn - fp
        flags = []
        precision = _ratio(tp, tp + fp, "precision", flags)
        recall = _ratio(tp, tp + fn, "recall", flags)
        specificity = _ratio(tn, tn + fp, "specificity", flags)
        if precision + recall == 0:
            flags.append("f1")
        out[name] = ClassMetrics(precision, recall, f1_score(precision, recall), specificity,
                                 tp + fn, tuple(flags))
    accuracy = int(np.trace(counts)) / total
    return out, accuracy


def average_reports(reports: Sequence) -> dict:
    """Unweighted mean of every metric (and accuracy) across subsets.

    Accepts :class:`SubsetResult` objects or ``(metrics, accuracy)`` pairs.
    Returns ``{"metrics": {class: {metric: mean}}, "accuracy": mean}``.
    """
    if not reports:
        raise DataError("nothing to average")
    pairs = [(r.metrics, r.accuracy) if isinstance(r, SubsetResult) else tuple(r)
             for r in reports]
    classes = list(pairs[0][0])
    for metrics, _ in pairs[1:]:
        if list(metrics) != classes:
            raise DataError(f"class sets differ between reports: {classes} vs {list(metrics)}")
    n = len(pairs)
    averages = {c: {m: sum(getattr(p[0][c], m) for p in pairs) / n for m in METRICS}
                for c in classes}
    return {"metrics": averages, "accuracy": sum(p[1] for p in pairs) / n}


def subset_result(true_labels, predicted_labels, class_names) -> SubsetResult:
    cm = confusion_matrix(true_labels, predicted_labels, class_names)
    metrics, accuracy = per_class_metrics(cm)
    return SubsetResult(cm, metrics, accuracy)


def argmax_lowest(probs: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    return np.asarray(probs).argmax(axis=1)


def evaluate(model, manifest, image_size=None, batch_size=32, prediction_log=None,
             source_factory=None) -> EvaluationReport:
    """Un-augmented inference on every test subset of ``manifest``."""
    from .train import ImageSource

    class_names = list(manifest.class_names)
    subsets = manifest.test_subset_ids()
    if not subsets:
        raise DataError("manifest has no test subsets; run partition_test_subsets first")
    image_size = tuple(image_size or model.input_shape[:2])
    make_source = source_factory or (lambda recs: ImageSource(recs, class_names, image_size,
                                                              cache=False))
    results, rows = [], []
    for sid in subsets:
        records = manifest.subset("test", sid)
        if not records:
            raise DataError(f"test subset {sid} is empty")
        source = make_source(records)
        probs = np.concatenate([model.forward(source.batch(range(i, min(i + batch_size,
                                                                          len(source)))))
                                for i in range(0, len(source), batch_size)])
        pred = argmax_lowest(probs)
        truth = [class_names[i] for i in source.labels]
        predicted = [class_names[i] for i in pred]
        results.append(subset_result(truth, predicted, class_names))
        for rec, t, p, row in zip(records, truth, predicted, probs):
            rows.append([str(rec.path), t, p, sid, *(f"{v:.17g}" for v in row)])
    if prediction_log is not None:
        write_prediction_log(prediction_log, rows, class_names)
    return EvaluationReport(class_names, results)


def write_prediction_log(path, rows, class_names):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "true_label", "predicted_label", "subset",
                         *(f"p_{c}" for c in class_names)])
        writer.writerows(rows)
