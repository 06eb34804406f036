"""Unit tests for confusion counts, per-class metrics and reports."""

import json

import numpy as np
import pytest

from ocunet.exceptions import DataError, ShapeError
from ocunet.metrics import (
    METRIC_NAMES,
    ConfusionCounts,
    MetricReport,
    confusion,
    labels_from_probs,
    macro_average,
    mean_iou,
    metrics,
    pixel_accuracy,
)


def _brute_force(pred, true, num_classes):
    """Pixel-by-pixel tallies and ratios for every class."""
    rows = []
    for c in range(num_classes):
        tp = fp = fn = tn = 0
        for p, t in zip(pred.ravel(), true.ravel()):
            if p == c and t == c:
                tp += 1
            elif p == c:
                fp += 1
            elif t == c:
                fn += 1
            else:
                tn += 1
        rows.append(
            {
                "accuracy": (tp + tn) / (tp + fp + fn + tn),
                "dice": 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else None,
                "iou": tp / (tp + fp + fn) if tp + fp + fn else None,
                "sensitivity": tp / (tp + fn) if tp + fn else None,
                "specificity": tn / (tn + fp) if tn + fp else None,
                "precision": tp / (tp + fp) if tp + fp else None,
            }
        )
    return rows


class TestConfusion:
    @pytest.mark.parametrize("num_classes", [2, 3])
    def test_random_pairs_match_pixel_loop(self, num_classes):
        rng = np.random.default_rng(num_classes)
        for _ in range(50):
            pred = rng.integers(0, num_classes, size=(32, 32))
            true = rng.integers(0, num_classes, size=(32, 32))
            values = metrics(confusion(pred, true, num_classes))
            for c, row in enumerate(_brute_force(pred, true, num_classes)):
                for name, expected in row.items():
                    if expected is not None:
                        assert values[name][c] == pytest.approx(expected, abs=1e-9)

    def test_counts_sum_to_pixels(self, rng):
        pred = rng.integers(0, 3, size=(2, 8, 8))
        true = rng.integers(0, 3, size=(2, 8, 8))
        counts = confusion(pred, true, 3)
        np.testing.assert_array_equal(
            counts.tp + counts.fp + counts.fn + counts.tn, [128, 128, 128]
        )
        assert counts.total == 128

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            confusion(np.zeros((2, 2), int), np.zeros((2, 3), int), 2)

    def test_label_out_of_range(self):
        with pytest.raises(DataError, match="truth"):
            confusion(np.zeros((2, 2), int), np.full((2, 2), 3), 3)

    def test_counts_merge(self, rng):
        a = rng.integers(0, 2, size=(4, 4))
        b = rng.integers(0, 2, size=(4, 4))
        merged = confusion(a, b, 2) + confusion(b, a, 2)
        joint = confusion(np.stack([a, b]), np.stack([b, a]), 2)
        np.testing.assert_array_equal(merged.tp, joint.tp)
        np.testing.assert_array_equal(merged.fn, joint.fn)

    def test_merge_rejects_class_mismatch(self):
        with pytest.raises(ShapeError):
            ConfusionCounts.zeros(2) + ConfusionCounts.zeros(3)


class TestMetrics:
    @pytest.mark.parametrize("num_classes", [2, 3])
    def test_identical_pixel_shuffle_keeps_every_metric(self, rng, num_classes):
        pred = rng.integers(0, num_classes, size=(2, 12, 12))
        true = rng.integers(0, num_classes, size=(2, 12, 12))
        order = rng.permutation(pred.size)
        shuffled = confusion(
            pred.ravel()[order].reshape(pred.shape),
            true.ravel()[order].reshape(true.shape),
            num_classes,
        )
        original = confusion(pred, true, num_classes)
        for name, values in metrics(original).items():
            np.testing.assert_allclose(metrics(shuffled)[name], values, atol=1e-12)
        assert mean_iou(shuffled) == pytest.approx(mean_iou(original))
        assert pixel_accuracy(shuffled) == pytest.approx(pixel_accuracy(original))

    def test_dice_iou_identity(self, rng):
        pred = rng.integers(0, 3, size=(16, 16))
        true = rng.integers(0, 3, size=(16, 16))
        values = metrics(confusion(pred, true, 3))
        iou = values["iou"]
        np.testing.assert_allclose(values["dice"], 2 * iou / (1 + iou), atol=1e-12)

    def test_absent_class_agreeing_scores_one(self):
        labels = np.zeros((4, 4), int)
        values = metrics(confusion(labels, labels, 3))
        for name in METRIC_NAMES:
            np.testing.assert_array_equal(values[name], [1.0, 1.0, 1.0])

    def test_false_positive_on_absent_class(self):
        true = np.zeros((2, 2), int)
        pred = np.array([[0, 1], [0, 0]])
        counts = confusion(pred, true, 2)
        values = metrics(counts)
        assert values["sensitivity"][1] == 0.0
        assert values["dice"][1] == 0.0
        # Class 1 never occurs in the truth, so only class 0 is averaged.
        assert macro_average(values["dice"], counts) == pytest.approx(6 / 7)

    def test_mean_iou_and_pixel_accuracy(self):
        true = np.array([[0, 0], [1, 1]])
        pred = np.array([[0, 1], [1, 1]])
        counts = confusion(pred, true, 2)
        assert pixel_accuracy(counts) == pytest.approx(0.75)
        assert mean_iou(counts) == pytest.approx((1 / 2 + 2 / 3) / 2)

    @pytest.mark.parametrize(
        "probs,expected",
        [
            (np.array([[[0.5], [0.49]]]), [[1, 0]]),
            (np.array([[[0.1, 0.7, 0.2], [0.6, 0.3, 0.1]]]), [[1, 0]]),
        ],
    )
    def test_labels_from_probs(self, probs, expected):
        np.testing.assert_array_equal(labels_from_probs(probs), expected)


class TestMetricReport:
    @pytest.fixture
    def report(self):
        true = np.array([[0, 0, 1], [1, 2, 2]])
        pred = np.array([[0, 1, 1], [1, 2, 0]])
        return MetricReport.from_counts(
            confusion(pred, true, 3), ["background", "epithelium", "carcinoma"]
        )

    def test_table_layout(self, report):
        assert list(report.table.columns) == list(METRIC_NAMES)
        assert list(report.table.index) == [
            "background",
            "epithelium",
            "carcinoma",
            "average",
        ]
        assert report.value("carcinoma", "dice") == pytest.approx(2 / 3)

    def test_average_row(self, report):
        dice = [report.value(n, "dice") for n in ("background", "epithelium")]
        dice.append(report.value("carcinoma", "dice"))
        assert report.value("average", "dice") == pytest.approx(np.mean(dice))

    def test_name_count_mismatch(self):
        with pytest.raises(ShapeError):
            MetricReport.from_counts(ConfusionCounts.zeros(3), ["a", "b"])

    def test_text_mentions_convention(self, report):
        text = report.to_text()
        assert "mIoU" in text
        assert "empty denominator" in text

    def test_write(self, report, tmp_path):
        paths = report.write(tmp_path / "eval")
        assert "mIoU" in paths["text"].read_text()
        doc = json.loads(paths["json"].read_text())
        assert set(doc["classes"]) == {"background", "epithelium", "carcinoma"}
        assert doc["average"]["dice"] == pytest.approx(report.value("average", "dice"))
        assert doc["pixel_accuracy"] == pytest.approx(4 / 6)
