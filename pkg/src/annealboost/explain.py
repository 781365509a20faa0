"""Monte-Carlo permutation estimates of Shapley feature attributions."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

PredictFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class Attribution:
    phi: np.ndarray
    base_value: float
    prediction: float
    # standard error of each phi and of the per-permutation contribution sum
    phi_se: np.ndarray
    sum_se: float
    n_permutations: int


@dataclass
class AttributionReport:
    features: list[str]
    mean_scores: list[float]
    n_instances: int
    n_permutations: int
    seed: int | None = None

    def sorted_rows(self) -> list[tuple[str, float]]:
        return sorted(zip(self.features, self.mean_scores), key=lambda t: (-t[1], t[0]))

    def score_of(self, feature: str) -> float:
        return self.mean_scores[self.features.index(feature)]

    def to_records(self) -> list[dict]:
        return [{"feature": f, "mean_score": s, "n_instances": self.n_instances,
                 "n_permutations": self.n_permutations} for f, s in self.sorted_rows()]

    def write(self, json_path: str | Path, table_path: str | Path | None = None) -> None:
        Path(json_path).write_text(json.dumps(self.to_records(), indent=2) + "\n")
        if table_path is not None:
            with open(table_path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["feature", "mean_score"])
                for f, s in self.sorted_rows():
                    w.writerow([f, repr(float(s))])


def shapley_sample(predict: PredictFn, background: np.ndarray, instance: np.ndarray,
                   m: int, rng: np.random.Generator) -> Attribution:
    """Permutation-sampling Shapley values of ``predict`` at ``instance``.

    Each of the ``m`` samples draws a feature ordering and a background row,
    then switches features from the background value to the instance value
    in that order, crediting each feature with the change in output.
    """
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    x = np.asarray(instance, dtype=np.float64).ravel()
    if m < 1:
        raise ValueError("m must be >= 1")
    if background.shape[0] == 0:
        raise ValueError("background is empty")
    d = x.shape[0]
    if background.shape[1] != d:
        raise ValueError(f"instance has {d} features, background has {background.shape[1]}")

    perms = np.array([rng.permutation(d) for _ in range(m)]).reshape(m, d)
    z_rows = rng.integers(0, background.shape[0], size=m)

    # row 0 of each block is the background row, row t has the first t
    # permuted features switched to the instance
    walk = np.repeat(background[z_rows][:, None, :], d + 1, axis=1)
    for t in range(d):
        cols = perms[:, t]
        walk[np.arange(m)[:, None], np.arange(t + 1, d + 1)[None, :], cols[:, None]] = x[cols][:, None]
    out = np.asarray(predict(walk.reshape(m * (d + 1), d)), dtype=np.float64).reshape(m, d + 1)
    deltas = np.diff(out, axis=1)

    contrib = np.zeros((m, d))
    contrib[np.arange(m)[:, None], perms] = deltas
    phi = contrib.mean(axis=0)
    sums = contrib.sum(axis=1)
    ddof = 1 if m > 1 else 0
    base = float(np.mean(predict(background)))
    return Attribution(
        phi=phi,
        base_value=base,
        prediction=float(np.asarray(predict(x[None, :]))[0]),
        phi_se=contrib.std(axis=0, ddof=ddof) / np.sqrt(m),
        sum_se=float(sums.std(ddof=ddof) / np.sqrt(m)),
        n_permutations=m,
    )


def mean_shap_report(predict: PredictFn, sample: np.ndarray, m: int, rng: np.random.Generator,
                     feature_names: Sequence[str] | None = None,
                     background: np.ndarray | None = None, seed: int | None = None) -> AttributionReport:
    """Signed mean attribution per feature over the rows of ``sample``.

    ``background`` defaults to ``sample`` itself. Averaging over a sample
    drawn from the background distribution drives every signed mean toward
    zero, so callers wanting directions should explain a sample that differs
    from the background (e.g. class-balanced rows against the population).
    """
    sample = np.atleast_2d(np.asarray(sample, dtype=np.float64))
    if sample.shape[0] == 0:
        raise ValueError("sample is empty")
    background = sample if background is None else np.atleast_2d(background)
    d = sample.shape[1]
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(d)]
    if len(names) != d:
        raise ValueError("feature_names length does not match the sample")
    seeds = rng.integers(0, 2**63 - 1, size=sample.shape[0])
    total = np.zeros(d)
    for row, s in zip(sample, seeds):
        total += shapley_sample(predict, background, row, m, np.random.default_rng(int(s))).phi
    return AttributionReport(names, [float(v) for v in total / sample.shape[0]],
                             sample.shape[0], m, seed)
