"""Confusion counts and the derived accuracy, F1, and balanced-accuracy metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class ConfusionMatrix:
    """Binary confusion counts with class 1 (non-misleading) as positive."""

    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricsReport:
    ba: float
    accuracy: float
    f1: float
    n: int
    support_pos: int
    support_neg: int
    degenerate: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "ba": self.ba,
            "accuracy": self.accuracy,
            "f1": self.f1,
            "n": self.n,
            "support_pos": self.support_pos,
            "support_neg": self.support_neg,
            "degenerate": list(self.degenerate),
        }

    CSV_HEADER = "ba,accuracy,f1,n,support_pos,support_neg,degenerate"

    def csv_row(self) -> str:
        """Single CSV row matching CSV_HEADER, for experiment grids."""
        return ",".join([
            repr(self.ba), repr(self.accuracy), repr(self.f1),
            str(self.n), str(self.support_pos), str(self.support_neg),
            "|".join(self.degenerate),
        ])


def confusion(preds: Sequence[int], truth: Sequence[int]) -> ConfusionMatrix:
    """Count tp/tn/fp/fn over parallel binary label sequences."""
    if len(preds) != len(truth) or len(preds) == 0:
        raise ValueError(
            f"preds and truth must be equal-length and non-empty, "
            f"got {len(preds)} vs {len(truth)}"
        )
    tp = tn = fp = fn = 0
    for p, t in zip(preds, truth):
        if p not in (0, 1) or t not in (0, 1):
            raise ValueError(f"labels must be 0 or 1, got pred={p!r} truth={t!r}")
        if t == 1:
            if p == 1:
                tp += 1
            else:
                fn += 1
        else:
            if p == 1:
                fp += 1
            else:
                tn += 1
    return ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn)


def balanced_accuracy(cm: ConfusionMatrix) -> float:
    """Mean of sensitivity and specificity; a zero-support class contributes rate 0."""
    tpr = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn > 0 else 0.0
    tnr = cm.tn / (cm.tn + cm.fp) if cm.tn + cm.fp > 0 else 0.0
    return 0.5 * (tpr + tnr)


def f1_and_accuracy(cm: ConfusionMatrix) -> tuple[float, float]:
    """Positive-class F1 (0 when its denominator vanishes) and plain accuracy."""
    denom = 2 * cm.tp + cm.fp + cm.fn
    f1 = 2 * cm.tp / denom if denom > 0 else 0.0
    accuracy = (cm.tp + cm.tn) / cm.n
    return f1, accuracy


def metrics_report(cm: ConfusionMatrix) -> MetricsReport:
    """Bundle all metrics, flagging degenerate denominators explicitly."""
    flags = []
    if cm.tp + cm.fn == 0:
        flags.append("no_positive_support")
    if cm.tn + cm.fp == 0:
        flags.append("no_negative_support")
    if 2 * cm.tp + cm.fp + cm.fn == 0:
        flags.append("f1_undefined")
    f1, accuracy = f1_and_accuracy(cm)
    return MetricsReport(
        ba=balanced_accuracy(cm),
        accuracy=accuracy,
        f1=f1,
        n=cm.n,
        support_pos=cm.tp + cm.fn,
        support_neg=cm.tn + cm.fp,
        degenerate=tuple(flags),
    )
