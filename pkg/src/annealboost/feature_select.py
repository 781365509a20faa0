"""Wrapper feature selection: sequential forward and backward search.

Subsets are scored by the holdout AUC of a tree evaluator (the single-tree
or forest preset) trained on a fixed stratified 75/25 split of the training
data.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gbt
from .metrics import roc_auc
from .preprocess import Dataset, split

EMPTY_SET_SCORE = 0.5
METHODS = ("DT_SFS", "DT_SBS", "RF_SFS", "RF_SBS")


@dataclass(frozen=True)
class SelectionCriterion:
    evaluator: gbt.GbtHyperparams
    holdout_fraction: float = 0.25
    seed: int = 0

    @classmethod
    def dt(cls, seed: int = 0) -> "SelectionCriterion":
        return cls(gbt.preset_dt(), seed=seed)

    @classmethod
    def rf(cls, seed: int = 0) -> "SelectionCriterion":
        return cls(gbt.preset_rf(), seed=seed)


@dataclass
class SelectionStep:
    feature: str
    action: str
    j_before: float
    j_after: float


@dataclass
class SelectionResult:
    method: str
    selected: list[str]
    steps: list[SelectionStep] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "selected": list(self.selected),
            "steps": [vars(s) for s in self.steps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionResult":
        return cls(d["method"], list(d["selected"]), [SelectionStep(**s) for s in d["steps"]])

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


class SubsetScorer:
    """Scores feature subsets of one dataset under a fixed criterion.

    The holdout split is drawn once; each score trains the evaluator afresh
    with a generator seeded from the criterion, so a subset always gets the
    same score. Scores are memoised by subset.
    """

    def __init__(self, train_set: Dataset, criterion: SelectionCriterion):
        self.criterion = criterion
        self.columns = train_set.columns
        fit, hold = split(train_set, 1.0 - criterion.holdout_fraction, stratified=True, seed=criterion.seed)
        if len(np.unique(hold.labels)) < 2:
            raise ValueError("holdout portion contains a single class")
        self.X_fit, self.y_fit = fit.X, fit.labels
        self.X_hold, self.y_hold = hold.X, hold.labels
        self._index = {c: j for j, c in enumerate(self.columns)}
        self._cache: dict[tuple[int, ...], float] = {}

    def __call__(self, features: Sequence[str]) -> float:
        if not features:
            raise ValueError("feature subset is empty")
        unknown = [f for f in features if f not in self._index]
        if unknown:
            raise ValueError(f"features not in dataset: {unknown}")
        idx = tuple(sorted(self._index[f] for f in features))
        if idx not in self._cache:
            cols = list(idx)
            model = gbt.train(self.X_fit[:, cols], self.y_fit, self.criterion.evaluator,
                              np.random.default_rng(self.criterion.seed))
            self._cache[idx] = roc_auc(self.y_hold, model.predict_proba(self.X_hold[:, cols]))
        return self._cache[idx]


def evaluate_subset(train_set: Dataset, features: Sequence[str], criterion: SelectionCriterion) -> float:
    return SubsetScorer(train_set, criterion)(features)


def _ordered(features, order: dict[str, int]) -> list[str]:
    return sorted(features, key=order.__getitem__)


def sfs(train_set: Dataset, criterion: SelectionCriterion, method: str = "SFS",
        scorer: SubsetScorer | None = None) -> SelectionResult:
    columns = train_set.columns
    if not columns:
        raise ValueError("need at least one candidate feature")
    score = scorer or SubsetScorer(train_set, criterion)
    order = {c: j for j, c in enumerate(columns)}
    selected: list[str] = []
    current = EMPTY_SET_SCORE
    result = SelectionResult(method, [])
    while len(selected) < len(columns):
        best_f, best_j = None, -np.inf
        for f in columns:
            if f in selected:
                continue
            j = score(selected + [f])
            if j > best_j:
                best_f, best_j = f, j
        if best_j <= current:
            break
        result.steps.append(SelectionStep(best_f, "add", current, best_j))
        selected.append(best_f)
        current = best_j
    result.selected = _ordered(selected, order)
    return result


def sbs(train_set: Dataset, criterion: SelectionCriterion, method: str = "SBS",
        scorer: SubsetScorer | None = None) -> SelectionResult:
    columns = train_set.columns
    if len(columns) < 2:
        raise ValueError("backward selection needs at least two features")
    score = scorer or SubsetScorer(train_set, criterion)
    selected = list(columns)
    current = score(selected)
    result = SelectionResult(method, [])
    while len(selected) > 1:
        best_f, best_j = None, -np.inf
        for f in selected:
            j = score([g for g in selected if g != f])
            if j > best_j:
                best_f, best_j = f, j
        if best_j < current:
            break
        result.steps.append(SelectionStep(best_f, "remove", current, best_j))
        selected.remove(best_f)
        current = best_j
    result.selected = list(selected)
    return result


def run_methods(train_set: Dataset, seed: int = 0, methods: Sequence[str] = METHODS) -> list[SelectionResult]:
    scorers: dict[str, SubsetScorer] = {}
    results = []
    for method in methods:
        evaluator, search = method.split("_")
        if evaluator not in scorers:
            crit = SelectionCriterion.dt(seed) if evaluator == "DT" else SelectionCriterion.rf(seed)
            scorers[evaluator] = SubsetScorer(train_set, crit)
        scorer = scorers[evaluator]
        fn = sfs if search == "SFS" else sbs
        results.append(fn(train_set, scorer.criterion, method, scorer))
    return results


def selection_report(results: Sequence[SelectionResult], all_features: Sequence[str]) -> list[list]:
    """Rows of ``[feature, mark per method..., Total]`` plus a final totals row.

    Marks are 1 (selected) or 0.
    """
    if not results:
        raise ValueError("need at least one selection result")
    header = ["feature"] + [r.method for r in results] + ["Total"]
    rows = [header]
    chosen = [set(r.selected) for r in results]
    for f in all_features:
        marks = [int(f in c) for c in chosen]
        rows.append([f] + marks + [sum(marks)])
    rows.append(["Total"] + [len(r.selected) for r in results] + [""])
    return rows


def write_report(rows: list[list], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
