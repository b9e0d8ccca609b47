"""
Binary evaluation metrics for the energy class.

Row convention follows the published matrices: rows are the true class,
columns the prediction, non-energy first, i.e. ((tn, fp), (fn, tp)).
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Hashable, Mapping, Tuple

import pandas as pd
from sklearn.metrics import confusion_matrix

from .errors import EvaluationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    tn: int
    fp: int
    fn: int
    tp: int

    def __post_init__(self):
        if min(self.tn, self.fp, self.fn, self.tp) < 0:
            raise ValueError("confusion entries must be non-negative")

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    def rows(self) -> Tuple[Tuple[int, int], Tuple[int, int]]:
        return ((self.tn, self.fp), (self.fn, self.tp))

    @classmethod
    def parse(cls, text: str) -> "ConfusionMatrix":
        """`"91,9,23,77"` (tn, fp, fn, tp)."""
        parts = [p for p in text.replace(";", ",").split(",") if p.strip()]
        if len(parts) != 4:
            raise ValueError(f"expected tn,fp,fn,tp, got {text!r}")
        return cls(*(int(p) for p in parts))


@dataclass(frozen=True)
class ClassificationMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float

    def rounded(self, places: int = 4) -> Dict[str, float]:
        return {k: round(v, places) for k, v in asdict(self).items()}


def confusion(predictions: Mapping[Hashable, bool], labels: Mapping[Hashable, bool]) -> ConfusionMatrix:
    if set(predictions) != set(labels):
        diff = sorted(map(str, set(predictions) ^ set(labels)))
        raise EvaluationError(f"prediction/label keys differ: {diff}")
    if not labels:
        return ConfusionMatrix(0, 0, 0, 0)
    keys = list(labels)
    y_true = [bool(labels[k]) for k in keys]
    y_pred = [bool(predictions[k]) for k in keys]
    tn, fp, fn, tp = confusion_matrix(y_true, y_pred, labels=[False, True]).ravel()
    return ConfusionMatrix(int(tn), int(fp), int(fn), int(tp))


def _ratio(num: int, den: int, name: str) -> float:
    if den == 0:
        logger.warning("%s undefined (zero denominator); reporting 0", name)
        return 0.0
    return num / den


def metrics(cm: ConfusionMatrix) -> ClassificationMetrics:
    if cm.total == 0:
        raise EvaluationError("cannot compute metrics on an empty confusion matrix")
    precision = _ratio(cm.tp, cm.tp + cm.fp, "precision")
    recall = _ratio(cm.tp, cm.tp + cm.fn, "recall")
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return ClassificationMetrics(
        accuracy=(cm.tp + cm.tn) / cm.total,
        precision=precision,
        recall=recall,
        f1=f1,
    )


def comparison_table(named: Mapping[str, ClassificationMetrics]) -> pd.DataFrame:
    """Side-by-side percentages, one column per classifier."""
    rows = {
        "Accuracy": {n: m.accuracy for n, m in named.items()},
        "Precision (energy)": {n: m.precision for n, m in named.items()},
        "Recall (energy)": {n: m.recall for n, m in named.items()},
        "F1 (energy)": {n: m.f1 for n, m in named.items()},
    }
    df = pd.DataFrame.from_dict(rows, orient="index", columns=list(named))
    df.index.name = "metric"
    return (df * 100).round(1)
