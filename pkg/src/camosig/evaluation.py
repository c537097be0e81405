"""Classification metrics, ROC/PR curves, and CI-overlap significance.

Undefined ratios (0/0) are reported as None rather than 0 so that a
single-class evaluation set cannot masquerade as a zero-rate one. AUC is
computed with the midrank formula, which equals the trapezoid rule over a
tie-grouped ROC curve and is exactly invariant under monotone transforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int
    positive_class: int = 1

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "positive_class": self.positive_class,
        }


@dataclass(frozen=True)
class ErrorBar:
    mean: float
    standard_error: float
    n: int

    @property
    def ci95(self) -> tuple[float, float]:
        half = 1.96 * self.standard_error
        return (self.mean - half, self.mean + half)


def confusion(true_labels, predicted_labels, positive_class=1) -> ConfusionMatrix:
    t = np.asarray(true_labels)
    p = np.asarray(predicted_labels)
    if t.shape != p.shape:
        raise EvaluationError("label arrays must have equal length")
    tpos = t == positive_class
    ppos = p == positive_class
    return ConfusionMatrix(
        tp=int(np.sum(tpos & ppos)),
        fp=int(np.sum(~tpos & ppos)),
        tn=int(np.sum(~tpos & ~ppos)),
        fn=int(np.sum(tpos & ~ppos)),
        positive_class=positive_class,
    )


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def metrics(cm: ConfusionMatrix) -> dict:
    """Accuracy, precision, sensitivity, specificity; 0/0 ratios are None."""
    if cm.total == 0:
        raise EvaluationError("empty confusion matrix")
    return {
        "accuracy": (cm.tp + cm.tn) / cm.total,
        "precision": _ratio(cm.tp, cm.tp + cm.fp),
        "sensitivity": _ratio(cm.tp, cm.tp + cm.fn),
        "specificity": _ratio(cm.tn, cm.tn + cm.fp),
    }


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auc_score(scores, labels, positive_class=1) -> float:
    """Area under the ROC curve via the midrank (Mann-Whitney) identity."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == positive_class
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("ROC needs both classes present")
    ranks = _midranks(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels, positive_class=1):
    """(fpr, tpr, thresholds) swept over unique scores descending, plus AUC.

    Tied scores collapse into a single threshold step.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == positive_class
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("ROC needs both classes present")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    is_pos = pos[order].astype(int)
    distinct = np.flatnonzero(np.diff(s)) if len(s) > 1 else np.array([], dtype=int)
    cut = np.concatenate([distinct, [len(s) - 1]])
    tp = np.cumsum(is_pos)[cut]
    fp = (cut + 1) - tp
    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    thresholds = np.concatenate([[np.inf], s[cut]])
    return fpr, tpr, thresholds, auc_score(scores, labels, positive_class)


def pr_curve(scores, labels, positive_class=1):
    """(recall, precision, thresholds) at each tie-grouped threshold step."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == positive_class
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise EvaluationError("PR curve needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    is_pos = pos[order].astype(int)
    distinct = np.flatnonzero(np.diff(s)) if len(s) > 1 else np.array([], dtype=int)
    cut = np.concatenate([distinct, [len(s) - 1]])
    tp = np.cumsum(is_pos)[cut]
    predicted = cut + 1
    recall = tp / n_pos
    precision = tp / predicted
    return recall, precision, s[cut]


def error_bar(values) -> ErrorBar:
    values = np.asarray(values, dtype=float)
    m = len(values)
    if m < 2:
        raise EvaluationError("need at least two values for an error bar")
    return ErrorBar(
        mean=float(values.mean()),
        standard_error=float(np.std(values, ddof=1) / np.sqrt(m)),
        n=m,
    )


def significant(a: ErrorBar, b: ErrorBar) -> bool:
    """True when the 95% confidence intervals do not overlap."""
    a_lo, a_hi = a.ci95
    b_lo, b_hi = b.ci95
    return a_hi < b_lo or b_hi < a_lo


def write_curve_csv(path, thresholds, xs, ys) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("threshold,x,y\n")
        for t, x, y in zip(thresholds, xs, ys):
            fh.write(f"{float(t)!r},{float(x)!r},{float(y)!r}\n")
