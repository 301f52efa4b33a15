"""Confusion-matrix statistics and run reporting.

Rows index the target class, columns the predicted class. Per-class cells
with no support (0/0) are reported as undefined and left out of the macro
averages rather than silently scored, which would bias rare classes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from reefnet import gridcore
from reefnet.dataset import ClassCatalog
from reefnet.errors import BadClassId, EmptyMatrix
from reefnet.gridcore import ImageGrid


@dataclass
class ConfusionMatrix:
    catalog: ClassCatalog
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        c = len(self.catalog)
        if self.counts is None:
            self.counts = np.zeros((c, c), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (c, c) or (self.counts < 0).any():
                raise ValueError(f"counts must be non-negative {c}x{c}")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.catalog != self.catalog:
            raise ValueError("cannot merge matrices over different catalogs")
        return ConfusionMatrix(self.catalog, self.counts + other.counts)


def accumulate(cm: ConfusionMatrix, target: int, predicted: int) -> ConfusionMatrix:
    """Count one (target, predicted) observation; mutates and returns ``cm``."""
    c = len(cm.catalog)
    if not (0 <= target < c and 0 <= predicted < c):
        raise BadClassId(f"ids ({target}, {predicted}) outside 0..{c - 1}")
    cm.counts[target, predicted] += 1
    return cm


@dataclass(frozen=True)
class ClassMetrics:
    precision: float | None
    recall: float | None
    specificity: float | None
    f_score: float | None


@dataclass(frozen=True)
class MetricsReport:
    overall_accuracy: float
    per_class: tuple[ClassMetrics, ...]
    macro_precision: float | None
    macro_recall: float | None
    macro_specificity: float | None
    macro_f_score: float | None


def _ratio(num: float, den: float) -> float | None:
    return None if den == 0 else num / den


def _macro(values) -> float | None:
    defined = [v for v in values if v is not None]
    return sum(defined) / len(defined) if defined else None


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class precision/recall/specificity/F plus overall accuracy.

    Per class k: TP = cm[k,k], FN = row_k - TP, FP = col_k - TP,
    TN = total - TP - FN - FP. Undefined ratios (zero denominator) become
    None and are excluded from the unweighted macro averages.
    """
    total = cm.total
    if total < 1:
        raise EmptyMatrix("confusion matrix has no counts")
    counts = cm.counts
    per_class = []
    for k in range(len(cm.catalog)):
        tp = float(counts[k, k])
        fn = float(counts[k, :].sum()) - tp
        fp = float(counts[:, k].sum()) - tp
        tn = float(total) - tp - fn - fp
        precision = _ratio(tp, tp + fp)
        recall = _ratio(tp, tp + fn)
        specificity = _ratio(tn, tn + fp)
        if precision is None or recall is None or precision + recall == 0:
            f_score = None
        else:
            f_score = 2 * precision * recall / (precision + recall)
        per_class.append(ClassMetrics(precision, recall, specificity, f_score))
    return MetricsReport(
        overall_accuracy=float(np.trace(counts)) / total,
        per_class=tuple(per_class),
        macro_precision=_macro(m.precision for m in per_class),
        macro_recall=_macro(m.recall for m in per_class),
        macro_specificity=_macro(m.specificity for m in per_class),
        macro_f_score=_macro(m.f_score for m in per_class),
    )


def _cell(value: float | None) -> str:
    return "" if value is None else repr(value)


def write_report(cm: ConfusionMatrix, path):
    """Report CSV: one row per class, then a __overall__ row that carries the
    macro averages and the overall accuracy."""
    rep = metrics(cm)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("class,precision,recall,specificity,f_score,overall_accuracy\n")
        for name, m in zip(cm.catalog.names, rep.per_class):
            fh.write(f"{name},{_cell(m.precision)},{_cell(m.recall)},"
                     f"{_cell(m.specificity)},{_cell(m.f_score)},\n")
        fh.write(f"__overall__,{_cell(rep.macro_precision)},{_cell(rep.macro_recall)},"
                 f"{_cell(rep.macro_specificity)},{_cell(rep.macro_f_score)},"
                 f"{rep.overall_accuracy!r}\n")


def write_confusion_csv(cm: ConfusionMatrix, path):
    names = cm.catalog.names
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("target\\predicted," + ",".join(names) + "\n")
        for name, row in zip(names, cm.counts):
            fh.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")


def heatmap(cm: ConfusionMatrix, cell_px: int = 24) -> ImageGrid:
    """Row-normalized grayscale heatmap, one cell_px square per cell."""
    counts = cm.counts.astype(np.float64)
    sums = counts.sum(axis=1, keepdims=True)
    normed = np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)
    big = np.kron(normed, np.ones((cell_px, cell_px))) * 255.0
    return ImageGrid(big[:, :, np.newaxis])


def write_heatmap(cm: ConfusionMatrix, path, cell_px: int = 24):
    gridcore.write_png(heatmap(cm, cell_px), path, rescale=False)
