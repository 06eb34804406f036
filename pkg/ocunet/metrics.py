"""
Evaluation metrics over per-class confusion counts
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .exceptions import DataError, ShapeError

logger = logging.getLogger(__name__)

METRIC_NAMES = ("accuracy", "dice", "iou", "sensitivity", "specificity", "precision")

EMPTY_RATIO_CONVENTION = (
    "a ratio with an empty denominator is 1.0 when prediction and truth agree "
    "on the class (no false positives and no false negatives) and 0.0 otherwise; "
    "averages skip classes absent from the ground truth"
)


@dataclass
class ConfusionCounts:
    """One-vs-rest pixel tallies, one entry per class."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    def __post_init__(self) -> None:
        self.tp, self.fp, self.fn, self.tn = (
            np.asarray(a, dtype=np.int64) for a in (self.tp, self.fp, self.fn, self.tn)
        )
        shapes = {a.shape for a in (self.tp, self.fp, self.fn, self.tn)}
        if len(shapes) != 1:
            raise ShapeError(
                f"confusion count arrays disagree in shape: {sorted(shapes)}"
            )

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionCounts":
        z = np.zeros(num_classes, dtype=np.int64)
        return cls(z, z.copy(), z.copy(), z.copy())

    @property
    def num_classes(self) -> int:
        return int(self.tp.size)

    @property
    def total(self) -> int:
        """Pixels counted; identical for every class."""
        if not self.num_classes:
            return 0
        return int(self.tp[0] + self.fp[0] + self.fn[0] + self.tn[0])

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        if other.num_classes != self.num_classes:
            raise ShapeError(
                f"cannot merge counts for {self.num_classes} and "
                f"{other.num_classes} classes"
            )
        return ConfusionCounts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.tn + other.tn,
        )


def labels_from_probs(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Argmax over channels, or a threshold for a single sigmoid channel."""
    probs = np.asarray(probs)
    if probs.shape[-1] == 1:
        return (probs[..., 0] >= threshold).astype(np.int64)
    return probs.argmax(axis=-1).astype(np.int64)


def confusion(
    y_pred_labels: np.ndarray, y_true_labels: np.ndarray, num_classes: int
) -> ConfusionCounts:
    """
    Tally TP/FP/FN/TN for every class.

    Raises:
        ShapeError: If the label maps differ in shape
        DataError: If a label lies outside [0, num_classes)
    """
    pred = np.asarray(y_pred_labels)
    true = np.asarray(y_true_labels)
    if pred.shape != true.shape:
        raise ShapeError(
            f"prediction {pred.shape} and truth {true.shape} differ in shape"
        )
    for name, labels in (("prediction", pred), ("truth", true)):
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise DataError(
                f"{name} labels must lie in [0, {num_classes}), "
                f"got {labels.min()}..{labels.max()}"
            )
    matrix = np.bincount(
        true.ravel().astype(np.int64) * num_classes + pred.ravel().astype(np.int64),
        minlength=num_classes * num_classes,
    ).reshape(num_classes, num_classes)
    tp = np.diag(matrix).copy()
    fp = matrix.sum(axis=0) - tp
    fn = matrix.sum(axis=1) - tp
    tn = pred.size - tp - fp - fn
    return ConfusionCounts(tp, fp, fn, tn)


def _ratio(
    numerator: np.ndarray, denominator: np.ndarray, agree: np.ndarray
) -> np.ndarray:
    out = np.where(agree, 1.0, 0.0)
    nonzero = denominator > 0
    out[nonzero] = numerator[nonzero] / denominator[nonzero]
    return out


def metrics(counts: ConfusionCounts) -> Dict[str, np.ndarray]:
    """Per-class accuracy, Dice, IoU, sensitivity, specificity and precision."""
    tp, fp, fn, tn = (
        a.astype(np.float64) for a in (counts.tp, counts.fp, counts.fn, counts.tn)
    )
    agree = (counts.fp == 0) & (counts.fn == 0)
    total = np.full(counts.num_classes, float(counts.total))
    return {
        "accuracy": _ratio(tp + tn, total, agree),
        "dice": _ratio(2 * tp, 2 * tp + fp + fn, agree),
        "iou": _ratio(tp, tp + fp + fn, agree),
        "sensitivity": _ratio(tp, tp + fn, agree),
        "specificity": _ratio(tn, tn + fp, agree),
        "precision": _ratio(tp, tp + fp, agree),
    }


def macro_average(values: np.ndarray, counts: ConfusionCounts) -> float:
    """Mean over classes present in the ground truth (all classes if none are)."""
    present = (counts.tp + counts.fn) > 0
    if not present.any():
        return float(np.mean(values))
    return float(np.mean(values[present]))


def mean_iou(counts: ConfusionCounts) -> float:
    return float(np.mean(metrics(counts)["iou"]))


def pixel_accuracy(counts: ConfusionCounts) -> float:
    total = counts.total
    return float(counts.tp.sum() / total) if total else 1.0


@dataclass
class MetricReport:
    """Per-class metric rows plus an ``average`` row, with overall scalars."""

    table: pd.DataFrame
    miou: float
    pixel_accuracy: float

    @classmethod
    def from_counts(
        cls, counts: ConfusionCounts, class_names: Optional[Sequence[str]] = None
    ) -> "MetricReport":
        names = list(class_names or [f"class_{c}" for c in range(counts.num_classes)])
        if len(names) != counts.num_classes:
            raise ShapeError(
                f"{len(names)} class names given for {counts.num_classes} classes"
            )
        values = metrics(counts)
        table = pd.DataFrame(values, index=names, columns=list(METRIC_NAMES))
        table.loc["average"] = [macro_average(values[m], counts) for m in METRIC_NAMES]
        table.index.name = "class"
        return cls(table, mean_iou(counts), pixel_accuracy(counts))

    def value(self, class_name: str, metric: str) -> float:
        return float(self.table.loc[class_name, metric])

    def to_dict(self) -> Dict[str, Any]:
        rows = {
            name: {metric: float(v) for metric, v in row.items()}
            for name, row in self.table.iterrows()
        }
        return {
            "classes": {k: v for k, v in rows.items() if k != "average"},
            "average": rows["average"],
            "miou": self.miou,
            "pixel_accuracy": self.pixel_accuracy,
            "convention": EMPTY_RATIO_CONVENTION,
        }

    def to_text(self) -> str:
        lines = [
            self.table.to_string(float_format=lambda v: f"{v:.4f}"),
            "",
            f"mIoU: {self.miou:.4f}",
            f"pixel accuracy: {self.pixel_accuracy:.4f}",
            f"note: {EMPTY_RATIO_CONVENTION}",
        ]
        return "\n".join(lines)

    def write(self, out_dir: Union[str, Path]) -> Dict[str, Path]:
        """Write ``metrics.txt`` and ``metrics.json`` into ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        text_path = out / "metrics.txt"
        json_path = out / "metrics.json"
        text_path.write_text(self.to_text() + "\n", encoding="utf-8")
        doc = json.dumps(self.to_dict(), indent=2)
        json_path.write_text(doc + "\n", encoding="utf-8")
        logger.info("Wrote metric report to %s and %s", text_path, json_path)
        return {"text": text_path, "json": json_path}
