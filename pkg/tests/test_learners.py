import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from metatasks.learners import (NUMERIC_FILL, _lbfgs, NumericFailureError, forest_fit, forest_predict,
                                logreg_fit, logreg_loss_grad, logreg_predict, preprocess)
from metatasks.model import FeatureSpec
from oracles import gradient_relative_error


def test_logreg_gradient_matches_finite_differences():
    errors = [gradient_relative_error(seed) for seed in range(20)]
    assert max(errors) < 1e-5


def test_preprocess_examples():
    schema = [FeatureSpec("a", "numeric", allows_missing=True),
              FeatureSpec("c", "categorical", ("x", "y", "z"), allows_missing=True)]
    df = pd.DataFrame({"a": [1.5, np.nan, 2.0, 3.0],
                       "c": pd.Categorical(["x", None, "z", "y"], categories=["x", "y", "z"])})
    pf = preprocess(df, schema)
    assert pf.matrix.shape == (4, 5)
    assert pf.matrix[1, 0] == NUMERIC_FILL == -1.0
    np.testing.assert_array_equal(pf.matrix[:, 1:], [[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0]])
    assert pf.encoding_map == {"a": (0, 1), "c": (1, 5)}


def test_preprocess_unknown_category_gives_zero_block():
    schema = [FeatureSpec("c", "categorical", ("x", "y"))]
    pf = preprocess(pd.DataFrame({"c": ["x", "w"]}, dtype=object), schema)
    np.testing.assert_array_equal(pf.matrix, [[1, 0, 0], [0, 0, 0]])


def test_preprocess_all_numeric_is_identity():
    X = np.random.default_rng(0).normal(size=(6, 3))
    schema = [FeatureSpec(f"f{j}", "numeric") for j in range(3)]
    pf = preprocess(pd.DataFrame(X, columns=[f.name for f in schema]), schema)
    np.testing.assert_array_equal(pf.matrix, X)


def test_logreg_separable_toy():
    X = np.array([[0.0, 0.0], [0.2, 0.1], [2.0, 2.0], [2.1, 1.8]])
    y = np.array([0, 0, 1, 1])
    model = logreg_fit(X, y, ["a", "b"])
    pred, conf = logreg_predict(model, X)
    np.testing.assert_array_equal(pred, y)
    assert model.training_meta["final_gradient_norm"] <= 1e-6


def test_logreg_single_class_is_constant():
    X = np.random.default_rng(1).normal(size=(5, 2))
    model = logreg_fit(X, np.full(5, 2), ["a", "b", "c"])
    pred, conf = logreg_predict(model, X)
    np.testing.assert_array_equal(pred, 2)
    np.testing.assert_array_equal(conf, np.tile([0.0, 0.0, 1.0], (5, 1)))


def test_logreg_zero_model_is_uniform():
    X = np.zeros((3, 4))
    model = logreg_fit(X, np.array([0, 1, 2]), ["a", "b", "c"], max_iter=0)
    _, conf = logreg_predict(model, np.random.default_rng(0).normal(size=(3, 4)))
    np.testing.assert_allclose(conf, 1 / 3, rtol=0, atol=1e-15)


def test_logreg_width_mismatch():
    model = logreg_fit(np.eye(2), [0, 1], ["a", "b"])
    with pytest.raises(ValueError):
        logreg_predict(model, np.zeros((1, 3)))


def test_logreg_rejects_non_finite_inputs():
    with pytest.raises(NumericFailureError):
        logreg_fit(np.array([[np.inf], [0.0]]), [0, 1], ["a", "b"])


def test_logreg_absent_class_gets_zero_confidence():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    model = logreg_fit(X, [0, 0, 2, 2], ["a", "b", "c"])
    _, conf = logreg_predict(model, X)
    assert np.all(conf[:, 1] == 0)


@given(st.integers(0, 10_000))
def test_logreg_confidences_are_distributions(seed):
    rng = np.random.default_rng(seed)
    n, D, C = int(rng.integers(3, 30)), int(rng.integers(1, 5)), int(rng.integers(2, 4))
    X = rng.normal(size=(n, D)) * 3
    y = rng.integers(0, C, size=n)
    model = logreg_fit(X, y, list(range(C)), max_iter=50)
    _, conf = logreg_predict(model, rng.normal(size=(7, D)) * 10)
    assert np.all((conf >= 0) & (conf <= 1))
    np.testing.assert_allclose(conf.sum(axis=1), 1.0, rtol=0, atol=1e-12)


@given(st.integers(0, 10_000))
def test_logreg_loss_never_increases(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(20, 3))
    y = rng.integers(0, 3, size=20)
    model = logreg_fit(X, y, [0, 1, 2], max_iter=40)
    Y = np.eye(3)[y][:, np.unique(y)]
    K = Y.shape[1]
    *_, losses = _lbfgs(lambda p: logreg_loss_grad(p, X, Y, 1.0), np.zeros(K * 3 + K), 40, 1e-6)
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert model.training_meta["final_loss"] == pytest.approx(losses[-1])


def test_forest_constant_target():
    X = np.random.default_rng(0).normal(size=(30, 2))
    model = forest_fit(X, np.full(30, 0.3), n_trees=10, seed=1)
    np.testing.assert_allclose(forest_predict(model, X), 0.3, rtol=0, atol=1e-15)


def test_forest_identity_function():
    x = np.linspace(0, 1, 200)
    model = forest_fit(x[:, None], x, n_trees=100, seed=0)
    assert np.mean(np.abs(forest_predict(model, x[:, None]) - x)) < 0.05
    # between training points the forest stays close to the analytic function
    mid = (x[:-1] + x[1:]) / 2
    assert np.mean(np.abs(forest_predict(model, mid[:, None]) - mid)) < 0.05


def test_forest_deterministic_and_seed_sensitive():
    rng = np.random.default_rng(5)
    X, t = rng.normal(size=(40, 3)), rng.random(40)
    a = forest_predict(forest_fit(X, t, n_trees=20, seed=7), X)
    b = forest_predict(forest_fit(X, t, n_trees=20, seed=7), X)
    c = forest_predict(forest_fit(X, t, n_trees=20, seed=8), X)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_forest_tree_order_irrelevant():
    rng = np.random.default_rng(6)
    X, t = rng.normal(size=(40, 3)), rng.random(40)
    model = forest_fit(X, t, n_trees=15, seed=0)
    shuffled = type(model)(tuple(reversed(model.trees)), model.n_trees, model.seed, model.n_features)
    np.testing.assert_array_equal(forest_predict(model, X), forest_predict(shuffled, X))


def test_forest_single_leaf_tree():
    model = forest_fit(np.zeros((4, 1)), [0.1, 0.2, 0.3, 0.4], n_trees=1, seed=0)
    pred = forest_predict(model, np.array([[0.0], [5.0], [-3.0]]))
    assert len(set(pred.tolist())) == 1


@given(st.integers(0, 10_000))
def test_forest_predictions_within_target_range(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 30))
    X, t = rng.normal(size=(n, 2)), rng.normal(size=n)
    model = forest_fit(X, t, n_trees=5, seed=seed)
    pred = forest_predict(model, rng.normal(size=(10, 2)) * 3)
    assert np.all(pred >= t.min() - 1e-12) and np.all(pred <= t.max() + 1e-12)


def test_forest_errors():
    with pytest.raises(ValueError):
        forest_fit(np.zeros((1, 1)), [1.0])
    with pytest.raises(ValueError):
        forest_fit(np.zeros((2, 1)), [1.0, np.nan])
    model = forest_fit(np.zeros((2, 2)), [1.0, 2.0], n_trees=1)
    with pytest.raises(ValueError):
        forest_predict(model, np.zeros((1, 3)))
