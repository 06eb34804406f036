"""Terminal rendering of metric reports and gradient-check tables."""

import math
from typing import List, Sequence, Tuple, Union

from .gradcheck import GradCheckResult
from .metrics import METRIC_NAMES, MetricReport

__all__ = [
    "colorize_score",
    "colorize_error",
    "get_score_legend",
    "format_report",
    "format_gradcheck",
]

_RESET = "\033[0m"
_RED = "\033[91m"
_ORANGE = "\033[38;5;208m"
_YELLOW = "\033[93m"
_GREEN = "\033[92m"
_CYAN = "\033[96m"

_NA_VALUES = {"NA", "N/A", "-", "--", "", "NAN"}

_SCORE_BANDS: List[Tuple[float, str, str]] = [
    (0.5, _RED, "< 0.50 (Poor)"),
    (0.7, _ORANGE, "0.50-0.70 (Weak)"),
    (0.8, _YELLOW, "0.70-0.80 (Fair)"),
    (0.9, _GREEN, "0.80-0.90 (Good)"),
    (math.inf, _CYAN, ">= 0.90 (Excellent)"),
]

_HEADERS = {
    "accuracy": "Acc",
    "dice": "Dice",
    "iou": "IoU",
    "sensitivity": "Sens",
    "specificity": "Spec",
    "precision": "Prec",
}


def _colorize(
    value: Union[str, float], bands: List[Tuple[float, str, str]], fmt: str
) -> str:
    """Wrap a numeric value in the ANSI color for its band; pass through N/A."""
    if isinstance(value, str):
        if value.upper() in _NA_VALUES:
            return value
        try:
            value = float(value)
        except ValueError:
            return value
    if math.isnan(value):
        return "NA"

    text = format(value, fmt)
    for upper, color, _label in bands:
        if value < upper:
            return f"{color}{text}{_RESET}"
    return text


def _legend(title: str, bands: List[Tuple[float, str, str]]) -> str:
    lines = [f"{title}:"]
    lines += [f"  {color}■{_RESET} {label}" for _upper, color, label in bands]
    return "\n".join(lines)


def colorize_score(value: Union[str, float]) -> str:
    """Color-code a [0, 1] score with ANSI escape codes."""
    return _colorize(value, _SCORE_BANDS, ".4f")


def colorize_error(error: float, tolerance: float) -> str:
    color = _GREEN if error <= tolerance else _RED
    return f"{color}{error:.2e}{_RESET}"


def get_score_legend() -> str:
    return _legend("Score Color Legend", _SCORE_BANDS)


def format_report(report: MetricReport, color: bool = True) -> str:
    """Per-class rows plus the average row, then mIoU and pixel accuracy."""
    name_width = max(len(str(n)) for n in report.table.index) + 2
    header = "Class".ljust(name_width) + "".join(
        _HEADERS[m].rjust(9) for m in METRIC_NAMES
    )
    lines = [header, "-" * len(header)]
    for name, row in report.table.iterrows():
        cells = []
        for m in METRIC_NAMES:
            text = f"{row[m]:.4f}"
            cell = text.rjust(9)
            if color:
                cell = cell.replace(text, colorize_score(row[m]))
            cells.append(cell)
        lines.append(str(name).ljust(name_width) + "".join(cells))
    lines.append("")
    miou = colorize_score(report.miou) if color else f"{report.miou:.4f}"
    acc = f"{report.pixel_accuracy:.4f}"
    if color:
        acc = colorize_score(report.pixel_accuracy)
    lines.append(f"mIoU: {miou}   pixel accuracy: {acc}")
    if color:
        lines += ["", get_score_legend()]
    return "\n".join(lines)


def format_gradcheck(results: Sequence[GradCheckResult], color: bool = True) -> str:
    width = max(len(r.name) for r in results) + 2 if results else 8
    header = "Unit".ljust(width) + "Kind".ljust(11) + "Max rel error".rjust(14)
    lines = [header + "  Status"]
    for r in results:
        plain = f"{r.max_rel_error:.2e}"
        error = colorize_error(r.max_rel_error, r.tolerance) if color else plain
        pad = " " * max(0, 14 - len(plain))
        status = "✅ pass" if r.passed else "❌ FAIL"
        row = r.name.ljust(width) + r.kind.ljust(11) + pad + error
        lines.append(row + "  " + status)
    return "\n".join(lines)
