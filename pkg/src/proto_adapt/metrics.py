"""Confusion matrices and per-class IoU reports."""

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ShapeError


@dataclass
class ConfusionMatrix:
    """Pixel counts, rows = ground truth, columns = prediction."""

    num_classes: int
    counts: np.ndarray | None = None

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)
        if self.counts.shape != (self.num_classes, self.num_classes):
            raise ShapeError("confusion matrix must be num_classes x num_classes")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ShapeError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)


def accumulate(cm: ConfusionMatrix, pred, truth) -> ConfusionMatrix:
    """Add one prediction/ground-truth pair of label maps."""
    pred = np.asarray(pred).astype(np.int64)
    truth = np.asarray(truth).astype(np.int64)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction {pred.shape} and truth {truth.shape} differ")
    n = cm.num_classes
    for name, labels in (("prediction", pred), ("truth", truth)):
        if labels.size and (labels.min() < 0 or labels.max() >= n):
            raise ValueError(f"{name} holds labels outside [0, {n})")
    flat = n * truth.ravel() + pred.ravel()
    counts = np.bincount(flat, minlength=n * n).reshape(n, n)
    return ConfusionMatrix(n, cm.counts + counts)


@dataclass
class IouReport:
    per_class: np.ndarray  # percent, NaN where the class has zero union
    overall: float
    class_names: list[str]

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.per_class)

    def to_frame(self) -> pd.DataFrame:
        """``class,iou_percent`` rows plus an ``overall`` row; absent classes read 'absent'."""
        values = [f"{v:.2f}" if not np.isnan(v) else "absent" for v in self.per_class]
        values.append(f"{self.overall:.2f}" if not np.isnan(self.overall) else "absent")
        return pd.DataFrame({"class": [*self.class_names, "overall"], "iou_percent": values})

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False)

    def to_dict(self) -> dict:
        return {
            "per_class": {
                name: (None if np.isnan(v) else round(float(v), 2))
                for name, v in zip(self.class_names, self.per_class)
            },
            "overall": None if np.isnan(self.overall) else round(float(self.overall), 2),
        }


def default_class_names(num_classes: int) -> list[str]:
    return [f"class_{c}" for c in range(num_classes)]


def iou_report(cm: ConfusionMatrix, class_names: list[str] | None = None) -> IouReport:
    """IoU_c = TP / (TP + FP + FN) in percent; the overall mean skips zero-union classes."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    union = counts.sum(axis=0) + counts.sum(axis=1) - tp
    per_class = np.full(cm.num_classes, np.nan)
    present = union > 0
    per_class[present] = 100.0 * tp[present] / union[present]
    overall = float(per_class[present].mean()) if present.any() else float("nan")
    names = class_names or default_class_names(cm.num_classes)
    if len(names) != cm.num_classes:
        raise ValueError("one class name per class is required")
    return IouReport(per_class, overall, list(names))


def _cell(value: float) -> str:
    return "absent" if np.isnan(value) else f"{value:.2f}"


def format_table(rows: dict[str, IouReport]) -> str:
    """Aligned text table: one row per method, per-class IoU columns, then Overall."""
    if not rows:
        return ""
    names = next(iter(rows.values())).class_names
    header = ["Method", *names, "Overall"]
    body = [
        [label, *(_cell(v) for v in report.per_class), _cell(report.overall)]
        for label, report in rows.items()
    ]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]

    def _line(cells):
        first = cells[0].ljust(widths[0])
        rest = (cell.rjust(width) for cell, width in zip(cells[1:], widths[1:]))
        return "  ".join([first, *rest])

    rule = "-" * len(_line(header))
    return "\n".join([_line(header), rule, *(_line(r) for r in body)])
