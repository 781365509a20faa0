"""Binary classification metrics; the positive class is 1 (LBTC)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.stats import rankdata

METRIC_COLUMNS = ("accuracy", "auc", "sensitivity", "specificity", "f1")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class EvalReport:
    """Test-set performance of one model. ``None`` marks an undefined ratio."""

    model: str
    accuracy: Optional[float]
    auc: Optional[float]
    sensitivity: Optional[float]
    specificity: Optional[float]
    f1: Optional[float]
    threshold: float = 0.5
    n_test: int = 0
    confusion: Optional[dict] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)


def _binary(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{name} must contain only 0/1 values")
    return a.astype(np.int64)


def confusion(labels, predictions) -> ConfusionMatrix:
    y = _binary(labels, "labels")
    p = _binary(predictions, "predictions")
    if y.shape != p.shape:
        raise ValueError(f"length mismatch: {y.shape[0]} labels vs {p.shape[0]} predictions")
    if y.size == 0:
        raise ValueError("need at least one row")
    return ConfusionMatrix(
        tp=int(np.sum((y == 1) & (p == 1))),
        fp=int(np.sum((y == 0) & (p == 1))),
        tn=int(np.sum((y == 0) & (p == 0))),
        fn=int(np.sum((y == 1) & (p == 0))),
    )


def threshold_predictions(scores, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(scores) >= threshold).astype(np.int64)


def _ratio(num: int, den: int) -> Optional[float]:
    return None if den == 0 else num / den


def classification_metrics(m: ConfusionMatrix) -> dict[str, Optional[float]]:
    if m.total <= 0:
        raise ValueError("confusion matrix is empty")
    return {
        "accuracy": _ratio(m.tp + m.tn, m.total),
        "sensitivity": _ratio(m.tp, m.tp + m.fn),
        "specificity": _ratio(m.tn, m.tn + m.fp),
        "f1": _ratio(2 * m.tp, 2 * m.tp + m.fp + m.fn),
    }


def roc_auc(labels, scores) -> float:
    """Mann-Whitney AUC: (concordant + 0.5 * tied) / (n_pos * n_neg)."""
    y = _binary(labels, "labels")
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != y.shape:
        raise ValueError("labels and scores differ in length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluate_scores(model: str, labels, scores, threshold: float = 0.5) -> EvalReport:
    m = confusion(labels, threshold_predictions(scores, threshold))
    cm = classification_metrics(m)
    return EvalReport(model=model, auc=roc_auc(labels, scores), threshold=threshold,
                      n_test=m.total, confusion=asdict(m), **cm)
