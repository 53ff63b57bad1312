"""Classification metrics, the metrics report and its JSON and text renderings.

Zero-denominator convention: precision or recall is 0 when its denominator is
0, and F1 is 0 when precision and recall are both 0.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError

SCHEMA_VERSION = 1
ZERO_DIVISION_NOTE = "precision/recall are 0 when their denominator is 0; F1 is 0 when both are 0"


def confusion_matrix(y_true, y_pred, classes):
    """Counts with rows indexed by the true class and columns by the prediction."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ContractError("y_true and y_pred differ in length")
    if y_true.size and (min(y_true.min(), y_pred.min()) < 0 or max(y_true.max(), y_pred.max()) >= classes):
        raise ContractError(f"labels must lie in [0, {classes})")
    cm = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _ratio(num, den):
    return np.divide(num, den, out=np.zeros(np.shape(num), dtype=np.float64), where=den > 0)


def scores_from_confusion(cm):
    """Per-class precision, recall and F1 plus accuracy and macro averages."""
    cm = np.asarray(cm, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ContractError(f"confusion matrix must be square, got shape {cm.shape}")
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    precision = _ratio(tp, predicted)
    recall = _ratio(tp, actual)
    f1 = _ratio(2 * precision * recall, precision + recall)
    total = cm.sum()
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "accuracy": float(tp.sum() / total) if total else 0.0,
        "macro_precision": float(precision.mean()),
        "macro_recall": float(recall.mean()),
        "macro_f1": float(f1.mean()),
    }


@dataclass
class MetricsReport:
    class_names: list
    precision: list
    recall: list
    f1: list
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: list
    run: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, y_true, y_pred, class_names, run=None, timing=None):
        cm = confusion_matrix(y_true, y_pred, len(class_names))
        return cls.from_confusion(cm, class_names, run, timing)

    @classmethod
    def from_confusion(cls, cm, class_names, run=None, timing=None):
        s = scores_from_confusion(cm)
        return cls(
            class_names=list(class_names),
            precision=[float(v) for v in s["precision"]],
            recall=[float(v) for v in s["recall"]],
            f1=[float(v) for v in s["f1"]],
            accuracy=s["accuracy"],
            macro_precision=s["macro_precision"],
            macro_recall=s["macro_recall"],
            macro_f1=s["macro_f1"],
            confusion=np.asarray(cm).astype(int).tolist(),
            run=dict(run or {}),
            timing=dict(timing or {}),
        )

    def to_dict(self):
        out = asdict(self)
        out["schema_version"] = SCHEMA_VERSION
        out["zero_division"] = ZERO_DIVISION_NOTE
        return out

    @classmethod
    def from_dict(cls, d):
        check_schema(d)
        fields = {k: v for k, v in d.items() if k not in ("schema_version", "zero_division", "kind")}
        return cls(**fields)


def check_schema(d):
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ContractError(f"unsupported report schema version {version!r}")


def canonical_json(d):
    """Byte-stable JSON of a report dict with wall-clock timing removed."""
    return json.dumps(_strip_timing(d), sort_keys=True, separators=(",", ":")).encode("utf-8")


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k != "timing"}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def text_table(rows, class_names, digits=3):
    """Aligned table: a label column then precision, recall and F1 for each class.

    ``rows`` is a list of ``(label, MetricsReport)`` pairs.
    """
    header = ["method"]
    for name in class_names:
        header += [f"{name} P", f"{name} R", f"{name} F1"]
    body = []
    for label, report in rows:
        cells = [label]
        for p, r, f in zip(report.precision, report.recall, report.f1):
            cells += [f"{p:.{digits}f}", f"{r:.{digits}f}", f"{f:.{digits}f}"]
        body.append(cells)
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    fmt = lambda row: "  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths)))
    lines = [fmt(header), fmt(["-" * w for w in widths])] + [fmt(row) for row in body]
    return "\n".join(lines) + "\n"


__all__ = [
    "MetricsReport",
    "SCHEMA_VERSION",
    "canonical_json",
    "check_schema",
    "confusion_matrix",
    "scores_from_confusion",
    "text_table",
]
