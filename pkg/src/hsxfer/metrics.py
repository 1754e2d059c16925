"""Confusion matrices and the benchmark metrics (OA, AA, macro-F1, mIoU).

OA is the micro (pixel-averaged) accuracy; AA, F1 and mIoU are macro averages
over *scored* classes, i.e. classes that occur in the ground truth or in the
predictions. Classes absent from both are excluded instead of contributing 0/0.
"""
import io
from dataclasses import dataclass, field

import numpy as np

from .data.cube import IGNORE_LABEL
from .errors import DataError, EvaluationError, ShapeError


class ConfusionMatrix:
    """K x K counts; rows are ground truth, columns predictions."""

    def __init__(self, n_classes, counts=None):
        self.n_classes = int(n_classes)
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64) if counts is None else np.array(counts, dtype=np.int64)

    def __add__(self, other):
        if other.n_classes != self.n_classes:
            raise ShapeError("cannot merge confusion matrices of different class counts")
        return ConfusionMatrix(self.n_classes, self.counts + other.counts)

    @property
    def total(self):
        return int(self.counts.sum())

    def update(self, pred, label):
        pred = np.asarray(pred)
        label = np.asarray(label)
        if pred.shape != label.shape:
            raise ShapeError(f"prediction {pred.shape} and label {label.shape} extents differ")
        keep = label != IGNORE_LABEL
        t = label[keep].astype(np.int64)
        p = pred[keep].astype(np.int64)
        k = self.n_classes
        if t.size and (t.min() < 0 or t.max() >= k):
            raise DataError(f"label outside [0, {k})")
        if p.size and (p.min() < 0 or p.max() >= k):
            raise DataError(f"prediction outside [0, {k})")
        self.counts += np.bincount(t * k + p, minlength=k * k).reshape(k, k)
        return self


def accumulate(cm: ConfusionMatrix, pred, label) -> ConfusionMatrix:
    return cm.update(pred, label)


def _check(cm):
    if cm.total == 0:
        raise EvaluationError("confusion matrix is empty: no scored pixels")


def per_class(cm: ConfusionMatrix):
    """Dict of per-class arrays: tp, recall, precision, f1, iou, scored."""
    _check(cm)
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    rows = c.sum(axis=1)
    cols = c.sum(axis=0)
    scored = (rows + cols) > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        recall = np.where(rows > 0, tp / rows, 0.0)
        precision = np.where(cols > 0, tp / cols, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
        union = rows + cols - tp
        iou = np.where(union > 0, tp / union, 0.0)
    return {"tp": tp, "recall": recall, "precision": precision, "f1": f1, "iou": iou, "scored": scored}


def overall_accuracy(cm):
    _check(cm)
    return float(np.trace(cm.counts) / cm.total)


def _macro(cm, key):
    pc = per_class(cm)
    return float(pc[key][pc["scored"]].mean())


def average_accuracy(cm):
    return _macro(cm, "recall")


def macro_f1(cm):
    return _macro(cm, "f1")


def miou(cm):
    return _macro(cm, "iou")


@dataclass
class MetricReport:
    oa: float
    aa: float
    f1: float
    miou: float
    recall: list = field(default_factory=list)
    precision: list = field(default_factory=list)
    f1_per_class: list = field(default_factory=list)
    iou: list = field(default_factory=list)
    scored: list = field(default_factory=list)
    class_names: list = field(default_factory=list)

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix, class_names=None):
        pc = per_class(cm)
        names = list(class_names) if class_names else [str(i) for i in range(cm.n_classes)]
        s = pc["scored"]
        return cls(overall_accuracy(cm), float(pc["recall"][s].mean()), float(pc["f1"][s].mean()),
                   float(pc["iou"][s].mean()), pc["recall"].tolist(), pc["precision"].tolist(),
                   pc["f1"].tolist(), pc["iou"].tolist(), s.tolist(), names)

    def summary(self):
        return {"OA": self.oa, "AA": self.aa, "F1": self.f1, "mIoU": self.miou}

    def to_text(self):
        lines = [f"OA = {self.oa:.6f}", f"AA = {self.aa:.6f}", f"F1 = {self.f1:.6f}", f"mIoU = {self.miou:.6f}"]
        for i, name in enumerate(self.class_names):
            tag = "" if self.scored[i] else "  (unscored)"
            lines.append(f"class {name}: recall={self.recall[i]:.6f} precision={self.precision[i]:.6f} "
                         f"f1={self.f1_per_class[i]:.6f} iou={self.iou[i]:.6f}{tag}")
        return "\n".join(lines) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        buf.write("class,recall,precision,f1,iou\n")
        for i, name in enumerate(self.class_names):
            if self.scored[i]:
                buf.write(f"{name},{self.recall[i]:.6f},{self.precision[i]:.6f},"
                          f"{self.f1_per_class[i]:.6f},{self.iou[i]:.6f}\n")
        s = np.asarray(self.scored)
        mean_p = float(np.asarray(self.precision)[s].mean())
        buf.write(f"summary,{self.aa:.6f},{mean_p:.6f},{self.f1:.6f},{self.miou:.6f}\n")
        return buf.getvalue()


def evaluate_maps(preds, labels, n_classes, class_names=None) -> MetricReport:
    cm = ConfusionMatrix(n_classes)
    for p, t in zip(preds, labels):
        cm.update(p, t)
    return MetricReport.from_confusion(cm, class_names)
