import numpy as np
import pytest

from annealboost import explain
from annealboost.gbt import GbtHyperparams, train
from _oracles import exact_shapley


def test_dummy_feature_exactly_zero():
    rng = np.random.default_rng(0)
    bg = rng.normal(size=(50, 3))
    f = lambda X: np.tanh(X[:, 0] * X[:, 2])
    a = explain.shapley_sample(f, bg, np.array([0.3, 5.0, -1.0]), 200, np.random.default_rng(1))
    assert a.phi[1] == 0.0


def test_unused_tree_feature_exactly_zero():
    rng = np.random.default_rng(1)
    X = rng.random((200, 3))
    y = (X[:, 0] > 0.5).astype(int)
    model = train(X[:, :1].repeat(1, axis=1), y, GbtHyperparams(n_estimators=3))
    wide = lambda Z: model.predict_proba(Z[:, :1])
    a = explain.shapley_sample(wide, X, X[0], 100, np.random.default_rng(0))
    assert a.phi[1] == 0.0 and a.phi[2] == 0.0


def test_additive_model_within_three_se():
    rng = np.random.default_rng(2)
    bg = rng.normal(size=(400, 2))
    x = np.array([1.5, -0.7])
    a = explain.shapley_sample(lambda X: X[:, 0] + X[:, 1], bg, x, 2000, np.random.default_rng(3))
    for j in range(2):
        closed = x[j] - bg[:, j].mean()
        assert abs(a.phi[j] - closed) <= 3 * a.phi_se[j]


def test_two_feature_exact_enumeration():
    rng = np.random.default_rng(4)
    bg = rng.random((60, 2))
    f = lambda X: 1 / (1 + np.exp(-(2 * X[:, 0] * X[:, 1] - X[:, 1])))
    x = np.array([0.9, 0.2])
    a = explain.shapley_sample(f, bg, x, 5000, np.random.default_rng(5))
    assert np.max(np.abs(a.phi - exact_shapley(f, x, bg))) < 0.02


def test_efficiency_per_instance():
    rng = np.random.default_rng(6)
    bg = rng.random((100, 4))
    f = lambda X: np.sin(X @ np.array([1.0, -2.0, 0.5, 3.0]))
    for i in range(10):
        a = explain.shapley_sample(f, bg, rng.random(4), 300, np.random.default_rng(i))
        assert abs(a.phi.sum() - (a.prediction - a.base_value)) <= 3 * a.sum_se + 1e-12


def test_symmetry():
    rng = np.random.default_rng(7)
    base = rng.random((200, 2))
    bg = np.vstack([base, base[:, ::-1]])
    f = lambda X: X[:, 0] * X[:, 1]
    a = explain.shapley_sample(f, bg, np.array([0.8, 0.8]), 3000, np.random.default_rng(8))
    assert abs(a.phi[0] - a.phi[1]) <= 3 * np.hypot(*a.phi_se)


def test_variance_shrinks_like_one_over_m():
    rng = np.random.default_rng(9)
    bg = rng.normal(size=(300, 3))
    x = np.array([1.0, -1.0, 0.5])
    f = lambda X: X[:, 0] * X[:, 1] + X[:, 2]
    ms = [100, 400, 1600]
    var = []
    for m in ms:
        est = [explain.shapley_sample(f, bg, x, m, np.random.default_rng(s)).phi[0] for s in range(40)]
        var.append(np.var(est))
    slope = np.polyfit(np.log(ms), np.log(var), 1)[0]
    assert -1.4 < slope < -0.6


def test_report_constant_model_and_determinism(tmp_path):
    rng = np.random.default_rng(10)
    sample = rng.random((20, 3))
    rep = explain.mean_shap_report(lambda X: np.full(len(X), 0.3), sample, 20, np.random.default_rng(0))
    assert rep.mean_scores == [0.0, 0.0, 0.0]
    f = lambda X: X[:, 0] - X[:, 2]
    a = explain.mean_shap_report(f, sample, 30, np.random.default_rng(1), ["a", "b", "c"])
    b = explain.mean_shap_report(f, sample, 30, np.random.default_rng(1), ["a", "b", "c"])
    assert a == b
    rows = a.sorted_rows()
    assert [s for _, s in rows] == sorted((s for _, s in rows), reverse=True)
    a.write(tmp_path / "r.json", tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "feature,mean_score"


def test_errors():
    with pytest.raises(ValueError):
        explain.shapley_sample(lambda X: X[:, 0], np.zeros((3, 2)), np.zeros(3), 5, np.random.default_rng(0))
    with pytest.raises(ValueError):
        explain.shapley_sample(lambda X: X[:, 0], np.zeros((3, 2)), np.zeros(2), 0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        explain.mean_shap_report(lambda X: X[:, 0], np.zeros((0, 2)), 5, np.random.default_rng(0))
