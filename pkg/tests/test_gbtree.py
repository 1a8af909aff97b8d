import numpy as np
import pytest
from hypothesis import given, strategies as st

from szadapt.errors import ConfigError, DataError
from szadapt.evaluation import auc
from szadapt.gbtree import (GbtConfig, GbtModel, Tree, WeightedDataset, best_split,
                            fit_gbt, gbt_predict, sigmoid)


def test_best_split_two_points():
    t, gain = best_split([-1.0, 1.0], [1.0, 1.0], [0.0, 1.0], split_l2=0.0)
    assert t == 0.5 and gain == 1.0


def test_best_split_constant_column():
    assert best_split([1.0, -1.0, 2.0], [1.0, 1.0, 1.0], [3.0, 3.0, 3.0]) == (None, 0.0)


@given(st.permutations(range(6)))
def test_best_split_row_order(perm):
    g = np.array([-1.0, 0.5, 2.0, -0.3, 0.1, 1.0])
    h = np.array([1.0, 0.5, 0.2, 1.0, 0.3, 0.7])
    v = np.array([0.3, 1.2, -0.5, 0.9, 2.0, 1.1])
    p = np.array(perm)
    assert best_split(g, h, v) == best_split(g[p], h[p], v[p])


def test_hand_computed_single_tree():
    # x = 1..4, y = 0,0,1,1, w = 1,1,2,2: prevalence 2/3, base log 2, p = 2/3.
    # g = w(p - y) = 2/3, 2/3, -2/3, -2/3;  h = w p (1 - p) = 2/9, 2/9, 4/9, 4/9.
    # Split at 2.5: gain 0.5 * (16/9 / 4/9 + 16/9 / 8/9) = 3; leaves -3 and 1.5.
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    data = WeightedDataset(X, [0, 0, 1, 1], [1, 1, 2, 2])
    m = fit_gbt(data, GbtConfig(n_trees=1, max_depth=1, learning_rate=1.0, split_l2=0.0))
    tree = m.trees[0]
    assert abs(m.base_score - np.log(2.0)) <= 1e-15
    assert tree.feature[0] == 0 and tree.threshold[0] == 2.5
    assert np.allclose(tree.value[1:], [-3.0, 1.5], rtol=1e-14, atol=0)
    expected = sigmoid(np.log(2.0) + np.array([-3.0, -3.0, 1.5, 1.5]))
    assert np.allclose(gbt_predict(m, X), expected, rtol=1e-14, atol=0)


def test_zero_trees_predict_prevalence():
    X = np.arange(5.0)[:, None]
    m = fit_gbt(WeightedDataset(X, [0, 1, 1, 0, 1], [1, 1, 1, 1, 4]), GbtConfig(n_trees=0))
    assert np.allclose(gbt_predict(m, X), 6 / 8, rtol=1e-14)


def test_hand_built_stump():
    tree = Tree(np.array([0, -1, -1]), np.array([0.5, 0, 0]), np.array([1, -1, -1]),
                np.array([2, -1, -1]), np.array([0.0, -1.0, 2.0]))
    m = GbtModel(base_score=0.5, learning_rate=0.1, n_features=1, trees=[tree])
    p = gbt_predict(m, np.array([[0.0], [1.0]]))
    assert np.allclose(p, 1 / (1 + np.exp(-np.array([0.4, 0.7]))), rtol=1e-15)


def test_separable_data(rng):
    x = rng.standard_normal(60)
    x[np.abs(x) < 1e-3] = 0.5
    y = (x > 0).astype(int)
    m = fit_gbt(WeightedDataset(x[:, None], y, np.ones(60)), GbtConfig(n_trees=5))
    assert auc(gbt_predict(m, x[:, None]), y) == 1.0


def test_single_class_rejected():
    with pytest.raises(DataError):
        fit_gbt(WeightedDataset(np.ones((3, 1)), [1, 1, 1], np.ones(3)))


def test_doubling_weights_keeps_trees(rng):
    X = rng.standard_normal((80, 3))
    y = (X[:, 0] + 0.5 * rng.standard_normal(80) > 0).astype(int)
    w = rng.uniform(0.5, 2.0, 80)
    cfg = GbtConfig(n_trees=10, split_l2=0.0, min_child_weight=0.0)
    a = fit_gbt(WeightedDataset(X, y, w), cfg)
    b = fit_gbt(WeightedDataset(X, y, 2 * w), cfg)
    for ta, tb in zip(a.trees, b.trees):
        assert np.array_equal(ta.feature, tb.feature)
        assert np.array_equal(ta.threshold, tb.threshold)
        assert np.allclose(ta.value, tb.value, rtol=1e-10, atol=1e-12)


@given(st.integers(0, 10_000))
def test_training_loss_never_increases(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((60, 4))
    y = (X[:, 0] * X[:, 1] + 0.3 * rng.standard_normal(60) > 0).astype(int)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    w = rng.uniform(0.01, 1.0, 60)
    m = fit_gbt(WeightedDataset(X, y, w), GbtConfig(n_trees=30))
    assert np.all(np.diff(m.train_loss) <= 1e-12)


def test_fit_is_row_order_invariant(rng):
    X = rng.standard_normal((70, 3))
    y = (X.sum(axis=1) > 0).astype(int)
    w = rng.uniform(0.1, 1, 70)
    p = rng.permutation(70)
    a = fit_gbt(WeightedDataset(X, y, w), GbtConfig(n_trees=10))
    b = fit_gbt(WeightedDataset(X[p], y[p], w[p]), GbtConfig(n_trees=10))
    Xt = rng.standard_normal((20, 3))
    assert np.allclose(gbt_predict(a, Xt), gbt_predict(b, Xt), rtol=1e-12)


def test_tree_array_round_trip(rng):
    X = rng.standard_normal((50, 2))
    y = (X[:, 0] > 0).astype(int)
    t = fit_gbt(WeightedDataset(X, y, np.ones(50)), GbtConfig(n_trees=1)).trees[0]
    back = Tree.from_array(t.as_array())
    assert np.array_equal(back.predict(X), t.predict(X))
    assert t.depth() <= 4


@pytest.mark.parametrize("field, value", [("n_trees", -1), ("max_depth", 0),
                                          ("learning_rate", 0.0), ("split_l2", -1.0)])
def test_config_validation(field, value):
    with pytest.raises(ConfigError):
        GbtConfig(**{field: value})


def test_dataset_validation():
    with pytest.raises(DataError):
        WeightedDataset(np.ones((2, 1)), [0, 1], [1.0, 0.0])
    with pytest.raises(DataError):
        WeightedDataset(np.ones((2, 1)), [0, 2], [1.0, 1.0])
