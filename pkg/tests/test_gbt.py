import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from annealboost import gbt
from annealboost.gbt import (
    BoostedEnsemble, GbtHyperparams, grow_tree, leaf_weight, logistic_grad_hess, logistic_loss,
    predict_proba, preset_dt, preset_rf, split_gain, train,
)
from _oracles import best_root_split

STUMP_X = np.array([[1.0], [2.0], [3.0], [4.0]])
STUMP_Y = np.array([0, 0, 1, 1])
STUMP_HP = GbtHyperparams(n_estimators=1, n_parallel_trees=1, max_depth=1, gamma=0, l2=0, learning_rate=1)


def test_grad_hess_examples():
    assert logistic_grad_hess(1, 0.0) == (-0.5, 0.25)
    assert logistic_grad_hess(0, 0.0) == (0.5, 0.25)


@pytest.mark.parametrize("label", [0, 1])
def test_grad_hess_finite_difference(label):
    eps = 1e-5
    for m in np.linspace(-5, 5, 41):
        g, h = logistic_grad_hess(label, m)
        g_fd = (logistic_loss(label, m + eps) - logistic_loss(label, m - eps)) / (2 * eps)
        gp, _ = logistic_grad_hess(label, m + eps)
        gm, _ = logistic_grad_hess(label, m - eps)
        assert abs(g - g_fd) < 1e-6
        assert abs(h - (gp - gm) / (2 * eps)) < 1e-4


def test_leaf_weight_examples():
    assert leaf_weight(-2, 4, l2=1) == pytest.approx(0.4, abs=1e-12)
    assert leaf_weight(0.05, 1, l2=1, l1=0.1) == 0.0
    assert leaf_weight(-10, 1, l2=0, max_delta_step=1) == 1.0
    with pytest.raises(ValueError):
        leaf_weight(1, 0, l2=0)


def test_split_gain_examples():
    assert split_gain(1.5, 2, 1.5, 2, l2=0) == 0.0
    assert split_gain(-2, 1, 2, 1, l2=1) == pytest.approx(2.0, abs=1e-12)
    assert split_gain(-2, 1, 2, 1, l2=1, gamma=2.5) == pytest.approx(-0.5, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10), st.floats(0.1, 10), st.floats(0, 5))
def test_leaf_weight_minimises_leaf_objective(G, H, l2):
    w = leaf_weight(G, H, l2=l2)
    obj = lambda v: G * v + 0.5 * (H + l2) * v * v
    grid = np.linspace(w - 2, w + 2, 401)
    assert obj(w) <= obj(grid).min() + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(0.01, 1)), min_size=2, max_size=10),
       st.integers(1, 9), st.floats(0, 2), st.floats(0, 3))
def test_split_gain_equals_objective_drop(items, cut, l2, gamma):
    cut = min(cut, len(items) - 1)
    g = np.array([a for a, _ in items])
    h = np.array([b for _, b in items])
    GL, HL, GR, HR = g[:cut].sum(), h[:cut].sum(), g[cut:].sum(), h[cut:].sum()

    def leaf_obj(G, H):
        w = leaf_weight(G, H, l2=l2)
        return G * w + 0.5 * (H + l2) * w * w

    drop = leaf_obj(GL + GR, HL + HR) - leaf_obj(GL, HL) - leaf_obj(GR, HR) - gamma
    assert split_gain(GL, HL, GR, HR, l2=l2, gamma=gamma) == pytest.approx(drop, abs=1e-9)


def test_stump_example():
    model = train(STUMP_X, STUMP_Y, STUMP_HP)
    tree = model.rounds[0][0]
    assert tree.feature[0] == 0 and tree.threshold[0] == 2.5
    p = model.predict_proba(STUMP_X)
    assert np.all((p >= 0.5) == STUMP_Y.astype(bool))
    assert predict_proba(model, np.array([4.0])) > 0.5
    assert predict_proba(model, np.array([1.0])) < 0.5


def test_large_gamma_gives_leaf_only_trees():
    rng = np.random.default_rng(0)
    X = rng.random((40, 3))
    y = (rng.random(40) < 0.3).astype(int)
    y[:2] = [0, 1]
    model = train(X, y, GbtHyperparams(n_estimators=3, gamma=1e6))
    assert model.total_leaves == 3
    base = 1 / (1 + math.exp(-model.base_margin))
    leaf_only = model.predict_proba(X)
    assert np.ptp(leaf_only) == 0
    assert model.base_margin == pytest.approx(math.log(y.mean() / (1 - y.mean())))


def test_zero_margin_ensemble_is_half():
    empty = BoostedEnsemble(GbtHyperparams(), 0.0, (), ("x",))
    assert predict_proba(empty, np.array([3.0])) == 0.5


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 6), st.integers(1, 2), st.integers(0, 10**6))
def test_root_split_matches_brute_force(n, d, seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 4, size=(n, d)).astype(float)
    y = rng.integers(0, 2, size=n)
    margin = rng.normal(size=n)
    g, h = logistic_grad_hess(y, margin)
    hp = GbtHyperparams(max_depth=2, l2=1.0)
    tree = grow_tree(X, g, h, hp)
    ref = best_root_split(X, g, h, 1.0, 0.0)
    if ref is None:
        assert tree.feature[0] == -1
    else:
        assert (tree.feature[0], tree.threshold[0]) == pytest.approx(ref[:2])
    assert tree.depth <= 2


def test_depth_and_leaf_invariants():
    rng = np.random.default_rng(4)
    X = rng.random((300, 5))
    y = (X[:, 0] + 0.3 * rng.random(300) > 0.7).astype(int)
    for depth in (1, 3, 7):
        m = train(X, y, GbtHyperparams(n_estimators=4, max_depth=depth, n_parallel_trees=2, row_subsample=0.7),
                  np.random.default_rng(0))
        assert len(m.rounds) == 4
        for group in m.rounds:
            assert len(group) == 2
            for t in group:
                assert t.n_leaves >= 1 and t.depth <= depth


def test_training_loss_non_increasing():
    rng = np.random.default_rng(0)
    X = rng.random((200, 4))
    y = (X[:, 1] + 0.5 * rng.random(200) > 0.8).astype(int)
    for eta in (0.1, 0.5, 1.0):
        losses = []
        train(X, y, GbtHyperparams(n_estimators=15, learning_rate=eta, max_depth=3), track_loss=losses)
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_gamma_never_increases_leaves():
    rng = np.random.default_rng(2)
    X = rng.random((300, 4))
    y = (X[:, 0] * X[:, 2] + 0.2 * rng.random(300) > 0.3).astype(int)
    leaves = []
    for gamma in (0, 0.1, 0.5, 1, 2, 5):
        hp = GbtHyperparams(n_estimators=1, n_parallel_trees=5, max_depth=6, gamma=gamma,
                            row_subsample=0.8, col_subsample=0.75)
        leaves.append(train(X, y, hp, np.random.default_rng(9)).total_leaves)
    assert all(b <= a for a, b in zip(leaves, leaves[1:]))
    assert leaves[0] > leaves[-1]


def test_presets():
    dt, rf = preset_dt(), preset_rf()
    assert (dt.n_estimators, dt.n_parallel_trees, dt.learning_rate, dt.max_depth) == (1, 1, 1.0, 6)
    assert (rf.n_parallel_trees, rf.row_subsample, rf.col_subsample) == (50, 0.63, 0.7)
    rng = np.random.default_rng(1)
    X = rng.random((120, 3))
    y = (X[:, 0] > 0.5).astype(int)
    y[:5] = 1 - y[:5]
    single = GbtHyperparams(**{**rf.to_dict(), "n_parallel_trees": 1, "row_subsample": 1.0, "col_subsample": 1.0})
    assert np.array_equal(train(X, y, single).predict_proba(X), train(X, y, dt).predict_proba(X))
    a = train(X, y, rf, np.random.default_rng(3))
    b = train(X, y, rf, np.random.default_rng(3))
    assert a.to_dict() == b.to_dict()


def test_dt_preset_on_stump_matches_brute_force():
    model = train(STUMP_X, STUMP_Y, preset_dt())
    g, h = logistic_grad_hess(STUMP_Y, np.zeros(4))
    ref = best_root_split(STUMP_X, g, h, 0.0, 0.0)
    assert model.rounds[0][0].threshold[0] == ref[1]
    assert np.array_equal(model.predict_proba(STUMP_X) > 0.5, STUMP_Y.astype(bool))


def test_identical_parallel_trees_are_averaged_consistently():
    rng = np.random.default_rng(5)
    X = rng.random((80, 3))
    y = (X[:, 0] > 0.4).astype(int)
    one = train(X, y, GbtHyperparams(n_estimators=3, n_parallel_trees=1))
    many = train(X, y, GbtHyperparams(n_estimators=3, n_parallel_trees=7))
    assert np.allclose(one.predict_margin(X), many.predict_margin(X), atol=1e-12)


def test_serialisation_round_trip():
    rng = np.random.default_rng(6)
    X = rng.random((60, 3))
    y = (X[:, 2] > 0.5).astype(int)
    m = train(X, y, GbtHyperparams(n_estimators=2, n_parallel_trees=3, row_subsample=0.5), rng)
    back = BoostedEnsemble.from_dict(m.to_dict())
    assert np.array_equal(back.predict_proba(X), m.predict_proba(X))


def test_probabilities_strictly_inside_unit_interval():
    X = np.array([[0.0], [1.0]] * 10)
    y = np.array([0, 1] * 10)
    m = train(X, y, GbtHyperparams(n_estimators=50, learning_rate=1.0, l2=0.0))
    p = m.predict_proba(X)
    assert np.all((p > 0) & (p < 1))


def test_train_input_errors():
    X = np.ones((4, 1))
    with pytest.raises(ValueError):
        train(X, np.zeros(4), GbtHyperparams())
    with pytest.raises(ValueError):
        train(X, np.array([0, 1, 2, 1]), GbtHyperparams())
    with pytest.raises(ValueError):
        train(np.full((4, 1), np.nan), np.array([0, 1, 0, 1]), GbtHyperparams())
    m = train(STUMP_X, STUMP_Y, STUMP_HP)
    with pytest.raises(ValueError):
        m.predict_proba(np.ones((2, 3)))
    with pytest.raises(ValueError):
        GbtHyperparams(learning_rate=0)
