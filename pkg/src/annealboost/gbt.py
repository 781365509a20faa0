"""Second-order gradient-boosted trees for binary classification.

Trees are grown level-wise with exact greedy split search over pre-sorted
feature orders. Each boosting round fits ``n_parallel_trees`` trees to the
same gradients (on independent row/column subsamples) and adds the shrunken
average of their outputs to the margin.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Any, Sequence

import numpy as np
from numba import njit
from scipy.special import expit

HYPERPARAM_NAMES = (
    "n_estimators", "max_depth", "max_delta_step", "n_parallel_trees",
    "learning_rate", "l1", "l2", "gamma",
)


@dataclass(frozen=True)
class GbtHyperparams:
    n_estimators: int = 1
    max_depth: int = 6
    max_delta_step: float = 0.0
    n_parallel_trees: int = 1
    learning_rate: float = 0.3
    l1: float = 0.0
    l2: float = 1.0
    gamma: float = 0.0
    row_subsample: float = 1.0
    col_subsample: float = 1.0

    def __post_init__(self):
        if int(self.n_estimators) < 1:
            raise ValueError("n_estimators must be >= 1")
        if int(self.max_depth) < 1:
            raise ValueError("max_depth must be >= 1")
        if int(self.n_parallel_trees) < 1:
            raise ValueError("n_parallel_trees must be >= 1")
        if self.max_delta_step < 0:
            raise ValueError("max_delta_step must be >= 0 (0 disables the clamp)")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.l1 < 0 or self.l2 < 0 or self.gamma < 0:
            raise ValueError("l1, l2 and gamma must be >= 0")
        for name in ("row_subsample", "col_subsample"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")

    @classmethod
    def from_mapping(cls, values: dict[str, Any], **overrides) -> "GbtHyperparams":
        """Build from a tuned-parameter mapping; unknown keys are rejected."""
        allowed = {f.name for f in fields(cls)}
        unknown = set(values) - allowed
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        kw = dict(values)
        kw.update(overrides)
        for name in ("n_estimators", "max_depth", "n_parallel_trees"):
            if name in kw:
                kw[name] = int(kw[name])
        return cls(**kw)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def preset_dt() -> GbtHyperparams:
    """A single unshrunk, unregularised tree of depth 6."""
    return GbtHyperparams(n_estimators=1, n_parallel_trees=1, learning_rate=1.0,
                          max_depth=6, gamma=0.0, l2=0.0, l1=0.0)


def preset_rf() -> GbtHyperparams:
    """One round of 50 subsampled depth-6 trees, averaged."""
    return GbtHyperparams(n_estimators=1, n_parallel_trees=50, learning_rate=1.0,
                          max_depth=6, row_subsample=0.63, col_subsample=0.7,
                          gamma=0.0, l2=0.0, l1=0.0)


# -- closed forms ------------------------------------------------------------

def logistic_grad_hess(label, margin):
    p = expit(margin)
    return p - label, p * (1.0 - p)


def logistic_loss(label, margin):
    # log(1 + e^m) - y*m, stable for large |m|
    return np.logaddexp(0.0, margin) - label * margin


@njit(cache=True)
def _leaf_weight(G, H, l2, l1, max_delta_step):
    if G > l1:
        g = G - l1
    elif G < -l1:
        g = G + l1
    else:
        g = 0.0
    w = -g / (H + l2)
    if max_delta_step > 0.0:
        if w > max_delta_step:
            w = max_delta_step
        elif w < -max_delta_step:
            w = -max_delta_step
    return w


@njit(cache=True)
def _split_gain(GL, HL, GR, HR, l2, gamma):
    return 0.5 * (GL * GL / (HL + l2) + GR * GR / (HR + l2)
                  - (GL + GR) ** 2 / (HL + HR + l2)) - gamma


def leaf_weight(G: float, H: float, l2: float = 0.0, l1: float = 0.0,
                max_delta_step: float = 0.0) -> float:
    if H < 0:
        raise ValueError("hessian sum must be non-negative")
    if H + l2 == 0:
        raise ValueError("H + l2 is zero; leaf weight undefined")
    return float(_leaf_weight(float(G), float(H), float(l2), float(l1), float(max_delta_step)))


def split_gain(GL: float, HL: float, GR: float, HR: float,
               l2: float = 0.0, gamma: float = 0.0) -> float:
    if HL < 0 or HR < 0:
        raise ValueError("hessian sums must be non-negative")
    return float(_split_gain(float(GL), float(HL), float(GR), float(HR), float(l2), float(gamma)))


# -- tree growth -------------------------------------------------------------

TIE_TOL = 1e-12


@njit(cache=True)
def _grow(X, order, g, h, in_sample, cols, max_depth, l2, l1, max_delta_step, gamma):
    n = X.shape[0]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    G = np.zeros(cap)
    H = np.zeros(cap)

    node_of = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if in_sample[i]:
            node_of[i] = 0
            G[0] += g[i]
            H[0] += h[i]
    n_nodes = 1
    start, end = 0, 1
    depth = 0
    while end > start:
        nl = end - start
        best_gain = np.zeros(nl)
        best_feat = np.full(nl, -1, dtype=np.int64)
        best_thr = np.zeros(nl)
        best_gl = np.zeros(nl)
        best_hl = np.zeros(nl)
        if depth < max_depth:
            GL = np.zeros(nl)
            HL = np.zeros(nl)
            last = np.zeros(nl)
            seen = np.zeros(nl, dtype=np.bool_)
            for f in cols:
                GL[:] = 0.0
                HL[:] = 0.0
                seen[:] = False
                for t in range(n):
                    i = order[f, t]
                    nd = node_of[i]
                    if nd < start:
                        continue
                    k = nd - start
                    v = X[i, f]
                    if seen[k] and v > last[k]:
                        gl = GL[k]
                        hl = HL[k]
                        gr = G[nd] - gl
                        hr = H[nd] - hl
                        if hl + l2 > 0.0 and hr + l2 > 0.0:
                            gain = _split_gain(gl, hl, gr, hr, l2, gamma)
                            # gains within rounding of the incumbent count as
                            # ties, which keep the earlier feature/threshold
                            if gain > best_gain[k] + TIE_TOL * (1.0 + abs(best_gain[k])):
                                thr = 0.5 * (last[k] + v)
                                if thr <= last[k]:
                                    thr = v
                                best_gain[k] = gain
                                best_feat[k] = f
                                best_thr[k] = thr
                                best_gl[k] = gl
                                best_hl[k] = hl
                    GL[k] += g[i]
                    HL[k] += h[i]
                    last[k] = v
                    seen[k] = True
        for k in range(nl):
            nd = start + k
            if best_feat[k] >= 0:
                feature[nd] = best_feat[k]
                threshold[nd] = best_thr[k]
                left[nd] = n_nodes
                right[nd] = n_nodes + 1
                G[n_nodes] = best_gl[k]
                H[n_nodes] = best_hl[k]
                G[n_nodes + 1] = G[nd] - best_gl[k]
                H[n_nodes + 1] = H[nd] - best_hl[k]
                n_nodes += 2
            else:
                value[nd] = _leaf_weight(G[nd], H[nd], l2, l1, max_delta_step)
        for i in range(n):
            nd = node_of[i]
            if nd < start:
                continue
            if feature[nd] >= 0:
                if X[i, feature[nd]] < threshold[nd]:
                    node_of[i] = left[nd]
                else:
                    node_of[i] = right[nd]
            else:
                node_of[i] = -1
        start, end = end, n_nodes
        depth += 1
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy())


@njit(cache=True)
def _predict_into(X, feature, threshold, left, right, value, scale, out):
    for i in range(X.shape[0]):
        nd = 0
        while feature[nd] >= 0:
            if X[i, feature[nd]] < threshold[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
        out[i] += scale * value[nd]


@dataclass(frozen=True)
class Tree:
    """Flat array tree; ``feature[j] == -1`` marks node ``j`` as a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    @property
    def depth(self) -> int:
        def walk(j):
            if self.feature[j] < 0:
                return 0
            return 1 + max(walk(self.left[j]), walk(self.right[j]))
        return walk(0)

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def add_predictions(self, X: np.ndarray, scale: float, out: np.ndarray) -> None:
        _predict_into(X, self.feature, self.threshold, self.left, self.right, self.value,
                      float(scale), out)

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(X.shape[0])
        self.add_predictions(X, 1.0, out)
        return out

    def to_dict(self) -> dict:
        def node(j):
            if self.feature[j] < 0:
                return {"weight": float(self.value[j])}
            return {"feature": int(self.feature[j]), "threshold": float(self.threshold[j]),
                    "left": node(self.left[j]), "right": node(self.right[j])}
        return node(0)

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        feature, threshold, left, right, value = [], [], [], [], []

        def add(rec):
            j = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            if "weight" in rec:
                value[j] = float(rec["weight"])
            else:
                feature[j] = int(rec["feature"])
                threshold[j] = float(rec["threshold"])
                left[j] = add(rec["left"])
                right[j] = add(rec["right"])
            return j

        add(d)
        return cls(np.array(feature, dtype=np.int64), np.array(threshold),
                   np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                   np.array(value))


def presort(X: np.ndarray) -> np.ndarray:
    """Row order of every column, shape ``(n_features, n_rows)``."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)


def grow_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, hp: GbtHyperparams,
              rows: np.ndarray | None = None, cols: Sequence[int] | None = None,
              order: np.ndarray | None = None) -> Tree:
    X = np.ascontiguousarray(X, dtype=np.float64)
    n, d = X.shape
    in_sample = np.ones(n, dtype=np.bool_)
    if rows is not None:
        in_sample[:] = False
        in_sample[np.asarray(rows)] = True
    cols_arr = np.arange(d, dtype=np.int64) if cols is None else np.sort(np.asarray(cols, dtype=np.int64))
    if order is None:
        order = presort(X)
    arrays = _grow(X, order, np.asarray(g, dtype=np.float64), np.asarray(h, dtype=np.float64),
                   in_sample, cols_arr, int(hp.max_depth), float(hp.l2), float(hp.l1),
                   float(hp.max_delta_step), float(hp.gamma))
    return Tree(*arrays)


MARGIN_LIMIT = 36.0


@dataclass(frozen=True)
class BoostedEnsemble:
    hyperparams: GbtHyperparams
    base_margin: float
    rounds: tuple[tuple[Tree, ...], ...]
    feature_names: tuple[str, ...]

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def total_leaves(self) -> int:
        return sum(t.n_leaves for group in self.rounds for t in group)

    def used_features(self) -> set[int]:
        used: set[int] = set()
        for group in self.rounds:
            for t in group:
                used |= t.used_features()
        return used

    def predict_margin(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("feature values must be finite")
        X = np.ascontiguousarray(X)
        out = np.full(X.shape[0], self.base_margin)
        eta = self.hyperparams.learning_rate
        for group in self.rounds:
            # parallel trees grown on identical samples are the same object
            counts: dict[int, list] = {}
            for t in group:
                counts.setdefault(id(t), [t, 0])[1] += 1
            for t, c in counts.values():
                t.add_predictions(X, eta * c / len(group), out)
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        # beyond |36| the sigmoid rounds to exactly 0 or 1 in float64
        return expit(np.clip(self.predict_margin(X), -MARGIN_LIMIT, MARGIN_LIMIT))

    def to_dict(self) -> dict:
        return {
            "hyperparams": self.hyperparams.to_dict(),
            "base_margin": self.base_margin,
            "feature_names": list(self.feature_names),
            "rounds": [[t.to_dict() for t in group] for group in self.rounds],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedEnsemble":
        return cls(
            GbtHyperparams(**d["hyperparams"]),
            float(d["base_margin"]),
            tuple(tuple(Tree.from_dict(t) for t in group) for group in d["rounds"]),
            tuple(d["feature_names"]),
        )


def predict_proba(model: BoostedEnsemble, X) -> np.ndarray | float:
    X = np.asarray(X, dtype=np.float64)
    p = model.predict_proba(X)
    return float(p[0]) if X.ndim == 1 else p


def train(X: np.ndarray, y: np.ndarray, hp: GbtHyperparams,
          rng: np.random.Generator | None = None,
          feature_names: Sequence[str] | None = None,
          track_loss: list | None = None) -> BoostedEnsemble:
    """Fit a boosted ensemble to binary labels ``y``.

    ``track_loss``, when given, receives the mean training log-loss before
    the first round and after every round.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training data must be a non-empty 2-D matrix")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y have different numbers of rows")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature values must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    n, d = X.shape
    pos = float(y.sum())
    if pos == 0 or pos == n:
        raise ValueError("training labels contain a single class")
    if feature_names is None:
        feature_names = [f"f{j}" for j in range(d)]
    if len(feature_names) != d:
        raise ValueError("feature_names length does not match the data")
    rng = rng if rng is not None else np.random.default_rng(0)

    base = math.log(pos / (n - pos))
    margins = np.full(n, base)
    order = presort(X)
    subsampled = hp.row_subsample < 1 or hp.col_subsample < 1
    n_rows = max(1, int(round(hp.row_subsample * n)))
    n_cols = max(1, int(round(hp.col_subsample * d)))
    B = int(hp.n_parallel_trees)
    if track_loss is not None:
        track_loss.append(float(np.mean(logistic_loss(y, margins))))

    rounds = []
    for _ in range(int(hp.n_estimators)):
        g, h = logistic_grad_hess(y, margins)
        if subsampled:
            group = []
            for _b in range(B):
                rows = rng.choice(n, size=n_rows, replace=False) if hp.row_subsample < 1 else None
                cols = rng.choice(d, size=n_cols, replace=False) if hp.col_subsample < 1 else None
                group.append(grow_tree(X, g, h, hp, rows, cols, order))
        else:
            tree = grow_tree(X, g, h, hp, order=order)
            group = [tree] * B
        group = tuple(group)
        rounds.append(group)
        counts: dict[int, list] = {}
        for t in group:
            counts.setdefault(id(t), [t, 0])[1] += 1
        for t, c in counts.values():
            t.add_predictions(X, hp.learning_rate * c / B, margins)
        if track_loss is not None:
            track_loss.append(float(np.mean(logistic_loss(y, margins))))
    return BoostedEnsemble(hp, base, tuple(rounds), tuple(feature_names))
