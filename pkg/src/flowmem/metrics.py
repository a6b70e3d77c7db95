"""Confusion-matrix accumulation and macro-averaged scoring.

Macro averaging computes each metric per class first and then takes the
unweighted arithmetic mean, so rare classes weigh as much as common ones.
Predictions that resolved to no configured class land in a dedicated
Unknown column: they are wrong for accuracy and count as a false negative
for the true class, but are a false positive for no real class.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMatrixError, UnknownTrueLabelError
from .labels import ClassLabel, ClassSet


@dataclass
class ConfusionMatrix:
    class_set: ClassSet
    counts: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        n = len(self.class_set)
        if self.counts is None:
            self.counts = np.zeros((n, n + 1), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (n, n + 1):
                raise ValueError("counts grid shape does not match the class set")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accumulate(self, true_label: ClassLabel, predicted: ClassLabel) -> None:
        if true_label not in self.class_set:
            raise UnknownTrueLabelError(str(true_label))
        row = self.class_set.index(true_label)
        if predicted in self.class_set:
            col = self.class_set.index(predicted)
        else:
            col = len(self.class_set)  # Unknown / off-schema column
        self.counts[row, col] += 1

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        """Cell-wise sum; associative and commutative, so parallel scorers
        can accumulate privately and combine afterwards."""
        if self.class_set != other.class_set:
            raise ValueError("cannot merge matrices over different class sets")
        return ConfusionMatrix(self.class_set, counts=self.counts + other.counts)


@dataclass
class MetricsReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: dict[str, dict[str, float]]

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class": self.per_class,
        }


def macro_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Accuracy plus macro precision/recall/F1 with the 0-on-0/0 convention."""
    total = cm.total
    if total == 0:
        raise EmptyMatrixError("no scored outcomes")
    n = len(cm.class_set)
    grid = cm.counts
    per_class: dict[str, dict[str, float]] = {}
    precisions, recalls, f1s = [], [], []
    for i, label in enumerate(cm.class_set):
        tp = int(grid[i, i])
        fn = int(grid[i, :].sum()) - tp
        fp = int(grid[:, i].sum()) - tp
        precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
        recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
        f1 = (
            2.0 * precision * recall / (precision + recall)
            if (precision + recall) > 0
            else 0.0
        )
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)
        per_class[label.name] = {
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "support": float(grid[i, :].sum()),
        }
    trace = int(np.trace(grid[:, :n]))
    return MetricsReport(
        accuracy=trace / total,
        macro_precision=sum(precisions) / n,
        macro_recall=sum(recalls) / n,
        macro_f1=sum(f1s) / n,
        per_class=per_class,
    )


@dataclass
class CurvePoint:
    sequence_end: int
    window_macro_f1: float
    cumulative_macro_f1: float
    library_size: int

    def to_json(self) -> dict:
        return {
            "sequence_end": self.sequence_end,
            "window_macro_f1": self.window_macro_f1,
            "cumulative_macro_f1": self.cumulative_macro_f1,
            "library_size": self.library_size,
        }


def windowed_curve(
    outcomes: list[tuple[ClassLabel, ClassLabel]],
    window: int,
    class_set: ClassSet,
    library_sizes: list[int] | None = None,
) -> list[CurvePoint]:
    """Macro-F1 learning curve: one point per completed window.

    Each point carries both the trailing-window score and the
    cumulative-from-start score, plus the library size at the window end.
    """
    if window < 1:
        raise ValueError("window must be at least 1")
    if library_sizes is not None and len(library_sizes) != len(outcomes):
        raise ValueError("library_sizes must align with outcomes")
    points: list[CurvePoint] = []
    cumulative = ConfusionMatrix(class_set)
    window_cm = ConfusionMatrix(class_set)
    for i, (true_label, predicted) in enumerate(outcomes):
        cumulative.accumulate(true_label, predicted)
        window_cm.accumulate(true_label, predicted)
        if (i + 1) % window == 0:
            points.append(
                CurvePoint(
                    sequence_end=i + 1,
                    window_macro_f1=macro_metrics(window_cm).macro_f1,
                    cumulative_macro_f1=macro_metrics(cumulative).macro_f1,
                    library_size=library_sizes[i] if library_sizes else 0,
                )
            )
            window_cm = ConfusionMatrix(class_set)
    return points


def render_comparison_table(rows: list[tuple[str, MetricsReport]]) -> str:
    """Aligned-column text comparison: Accuracy, Precision, Recall, F1 (%)."""
    headers = ("Run", "Accuracy", "Precision", "Recall", "F1")
    name_width = max(len(headers[0]), *(len(name) for name, _ in rows)) if rows else len(headers[0])
    lines = [
        f"{headers[0]:<{name_width}}  {headers[1]:>9}  {headers[2]:>9}  {headers[3]:>9}  {headers[4]:>9}"
    ]
    for name, report in rows:
        lines.append(
            f"{name:<{name_width}}  "
            f"{report.accuracy * 100:>9.2f}  "
            f"{report.macro_precision * 100:>9.2f}  "
            f"{report.macro_recall * 100:>9.2f}  "
            f"{report.macro_f1 * 100:>9.2f}"
        )
    return "\n".join(lines)
