"""Classification metrics computed from confusion matrices.

All metrics derive from a single [K, K] confusion matrix (rows = true
class, columns = predicted class), so row sums equal per-class support.
Sensitivity generalizes to multi-class as the macro-averaged recall.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError("y_true and y_pred must be equal-length 1-D arrays")
    if y_true.size == 0:
        raise ValueError("cannot compute metrics on an empty set")
    if np.any((y_true < 0) | (y_true >= num_classes)) or np.any(
        (y_pred < 0) | (y_pred >= num_classes)
    ):
        raise ValueError("labels out of range")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def accuracy(cm: np.ndarray) -> float:
    return float(np.trace(cm) / cm.sum())


def cohens_kappa(cm: np.ndarray) -> float:
    """Chance-corrected agreement from the confusion matrix marginals."""
    n = cm.sum()
    po = np.trace(cm) / n
    pe = float((cm.sum(axis=1) * cm.sum(axis=0)).sum()) / (n * n)
    if pe == 1.0:
        # Single observed class on both sides: agreement is all-or-nothing.
        return 1.0 if po == 1.0 else 0.0
    return float((po - pe) / (1.0 - pe))


def sensitivity(cm: np.ndarray) -> float:
    """Macro-averaged recall over classes with nonzero support."""
    support = cm.sum(axis=1)
    present = support > 0
    recall = np.zeros(cm.shape[0])
    recall[present] = np.diag(cm)[present] / support[present]
    return float(recall[present].mean())


def weighted_f1(cm: np.ndarray) -> float:
    """Support-weighted mean of per-class F1 scores."""
    support = cm.sum(axis=1).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    tp = np.diag(cm).astype(np.float64)
    denom = support + predicted
    f1 = np.zeros(cm.shape[0])
    nonzero = denom > 0
    f1[nonzero] = 2.0 * tp[nonzero] / denom[nonzero]
    total = support.sum()
    return float((f1 * support).sum() / total)


@dataclass
class TaskMetrics:
    """Metrics of one task on one evaluation set."""

    task_id: int
    num_classes: int
    confusion: np.ndarray
    accuracy: float
    kappa: float
    sensitivity: float
    weighted_f1: float

    @property
    def chance_level(self) -> float:
        return 1.0 / self.num_classes

    def to_record(self) -> dict:
        return {
            "task_id": self.task_id,
            "num_classes": self.num_classes,
            "accuracy": self.accuracy,
            "kappa": self.kappa,
            "sensitivity": self.sensitivity,
            "weighted_f1": self.weighted_f1,
            "chance_level": self.chance_level,
        }


def evaluate_predictions(
    y_true: np.ndarray, y_pred: np.ndarray, num_classes: int, task_id: int = 0
) -> TaskMetrics:
    """All metrics for one prediction/label pair."""
    cm = confusion_matrix(y_true, y_pred, num_classes)
    return TaskMetrics(
        task_id=task_id,
        num_classes=num_classes,
        confusion=cm,
        accuracy=accuracy(cm),
        kappa=cohens_kappa(cm),
        sensitivity=sensitivity(cm),
        weighted_f1=weighted_f1(cm),
    )


@dataclass
class MetricsReport:
    """Per-task metrics of one evaluation run."""

    per_task: dict[int, TaskMetrics] = field(default_factory=dict)

    def mean_accuracy(self) -> float:
        return float(np.mean([m.accuracy for m in self.per_task.values()]))

    def to_records(self, **extra) -> list[dict]:
        return [dict(m.to_record(), **extra) for _, m in sorted(self.per_task.items())]


def summarize_over_seeds(reports: list[MetricsReport]) -> dict[int, dict[str, float]]:
    """Mean and standard deviation of each metric across seed runs."""
    if not reports:
        raise ValueError("no reports to summarize")
    task_ids = sorted(reports[0].per_task)
    summary: dict[int, dict[str, float]] = {}
    for tid in task_ids:
        rows = [r.per_task[tid] for r in reports]
        summary[tid] = {}
        for name in ("accuracy", "kappa", "sensitivity", "weighted_f1"):
            values = np.array([getattr(row, name) for row in rows])
            summary[tid][f"{name}_mean"] = float(values.mean())
            summary[tid][f"{name}_std"] = float(values.std())
            summary[tid][f"{name}_median"] = float(np.median(values))
    return summary
