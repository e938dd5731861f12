"""Meta-learners used by the simulated ensemble techniques.

* :func:`preprocess` - one-hot encoding plus static missing-value fill
* :func:`logreg_fit` / :func:`logreg_predict` - L2 multinomial logistic regression
* :func:`forest_fit` / :func:`forest_predict` - bootstrap random-forest regressor
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .model import FeatureSpec

NUMERIC_FILL = -1.0


class NumericFailureError(ArithmeticError):
    pass


# ---------------------------------------------------------------- preprocessing

@dataclass(frozen=True)
class PreprocessedFeatures:
    matrix: np.ndarray
    encoding_map: dict  # feature name -> (start, stop) column span

    @property
    def n_columns(self) -> int:
        return self.matrix.shape[1]

    def rows(self, index) -> np.ndarray:
        return self.matrix[np.asarray(index, dtype=np.int64)]


def preprocess(instances: pd.DataFrame, schema: Sequence[FeatureSpec]) -> PreprocessedFeatures:
    """Numeric features pass through with missing -> -1.

    Categorical features become one column per schema category plus a final
    "missing" column; values outside the schema give an all-zero block.
    """
    n = len(instances)
    blocks, spans, start = [], {}, 0
    for f in schema:
        col = instances[f.name]
        if f.kind == "numeric":
            values = pd.to_numeric(col, errors="coerce").to_numpy(dtype=float).reshape(n, 1)
            block = np.where(np.isnan(values), NUMERIC_FILL, values)
        else:
            cats = list(f.categories)
            block = np.zeros((n, len(cats) + 1))
            raw = col.astype(object).to_numpy()
            missing = pd.isna(raw)
            block[missing, len(cats)] = 1.0
            lookup = {c: j for j, c in enumerate(cats)}
            for i in np.flatnonzero(~missing):
                j = lookup.get(str(raw[i]))
                if j is not None:
                    block[i, j] = 1.0
        spans[f.name] = (start, start + block.shape[1])
        start += block.shape[1]
        blocks.append(block)
    matrix = np.hstack(blocks) if blocks else np.zeros((n, 0))
    return PreprocessedFeatures(matrix=matrix, encoding_map=spans)


# ---------------------------------------------------------------- logistic regression

@dataclass(frozen=True)
class LogRegModel:
    weights: np.ndarray  # (K, D) over the classes seen in training
    bias: np.ndarray  # (K,)
    class_labels: tuple  # full label set the caller works with
    fitted_classes: np.ndarray  # (K,) indices into class_labels
    training_meta: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def logreg_loss_grad(params: np.ndarray, X: np.ndarray, Y: np.ndarray, l2: float):
    """Summed cross-entropy + (l2/2)*||W||^2 and its gradient.

    ``params`` is ``[W.ravel(), b]`` with ``W`` of shape ``(K, D)``; ``Y`` is
    the one-hot target matrix ``(n, K)``.
    """
    n, D = X.shape
    K = Y.shape[1]
    W = params[:K * D].reshape(K, D)
    b = params[K * D:]
    Z = X @ W.T + b
    Zmax = Z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(Z - Zmax).sum(axis=1, keepdims=True)) + Zmax
    loss = float(np.sum(logsum[:, 0] - np.sum(Y * Z, axis=1)) + 0.5 * l2 * np.sum(W * W))
    R = np.exp(Z - logsum) - Y
    gW = R.T @ X + l2 * W
    gb = R.sum(axis=0)
    return loss, np.concatenate([gW.ravel(), gb])


def _lbfgs(fun, x0: np.ndarray, max_iter: int, tol: float, memory: int = 10):
    """Limited-memory BFGS with Armijo backtracking; every accepted step lowers the loss."""
    x = x0.copy()
    f, g = fun(x)
    if not np.isfinite(f):
        raise NumericFailureError("non-finite loss at initialization")
    s_hist, y_hist = [], []
    losses = [f]
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(g) <= tol:
            it -= 1
            break
        q = g.copy()
        alphas = []
        for s, y in reversed(list(zip(s_hist, y_hist))):
            a = s @ q / (y @ s)
            alphas.append(a)
            q -= a * y
        if s_hist:
            q *= (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
        for (s, y), a in zip(zip(s_hist, y_hist), reversed(alphas)):
            q += s * (a - (y @ q) / (y @ s))
        d = -q
        slope = g @ d
        if slope >= 0:
            d, slope = -g, -(g @ g)
            s_hist.clear()
            y_hist.clear()
        step = 1.0 if s_hist else min(1.0, 1.0 / max(np.linalg.norm(g), 1e-12))
        while True:
            x_new = x + step * d
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * step * slope:
                break
            step *= 0.5
            if step < 1e-20:
                return x, g, it, losses
        s, y = x_new - x, g_new - g
        if s @ y > 1e-12:
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        losses.append(f)
    if not np.isfinite(f):
        raise NumericFailureError("non-finite loss during training")
    return x, g, it, losses


def logreg_fit(X, y, class_labels: Sequence, max_iter: int = 1000, l2: float = 1.0,
               tol: float = 1e-6, seed: int = 0) -> LogRegModel:
    """Fit a multinomial logistic regression; ``y`` holds codes into ``class_labels``.

    Only classes that occur in ``y`` get parameters; the others receive
    confidence 0 at prediction time. A single observed class gives a constant
    model. Parameters start at zero, so ``seed`` has no effect.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if not np.all(np.isfinite(X)):
        raise NumericFailureError("non-finite training inputs")
    n, D = X.shape
    present = np.unique(y)
    K = len(present)
    if K <= 1:
        return LogRegModel(np.zeros((max(K, 1), D)), np.zeros(max(K, 1)), tuple(class_labels),
                           present if K else np.zeros(1, dtype=np.int64),
                           {"iterations_used": 0, "final_gradient_norm": 0.0, "seed": seed})
    Y = (y[:, None] == present[None, :]).astype(float)
    x0 = np.zeros(K * D + K)
    params, g, iters, losses = _lbfgs(lambda p: logreg_loss_grad(p, X, Y, l2), x0, max_iter, tol)
    return LogRegModel(
        weights=params[:K * D].reshape(K, D).copy(),
        bias=params[K * D:].copy(),
        class_labels=tuple(class_labels),
        fitted_classes=present,
        training_meta={"iterations_used": iters, "final_gradient_norm": float(np.linalg.norm(g)),
                       "final_loss": losses[-1], "seed": seed},
    )


def logreg_predict(model: LogRegModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Return (predicted class codes, confidences over all ``class_labels``)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} input columns, got {X.shape}")
    conf = np.zeros((X.shape[0], len(model.class_labels)))
    conf[:, model.fitted_classes] = _softmax(X @ model.weights.T + model.bias)
    return np.argmax(conf, axis=1), conf


# ---------------------------------------------------------------- random forest

@dataclass(frozen=True)
class RegressionTree:
    feature: np.ndarray  # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return self.value[node]


def _best_split(X: np.ndarray, y: np.ndarray):
    """Best variance-reduction split over all features, or None."""
    m = len(y)
    order = np.argsort(X, axis=0, kind="mergesort")
    xs = X[order, np.arange(X.shape[1])]
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return None
    ys = y[order]
    csum = np.cumsum(ys, axis=0)
    total = csum[-1, 0]
    csum = csum[:-1]
    n_left = np.arange(1, m, dtype=float)[:, None]
    # minimizing left+right SSE == maximizing sum_l^2/n_l + sum_r^2/n_r
    gain = csum * csum / n_left + (total - csum) ** 2 / (m - n_left)
    sse = np.where(valid, -gain, np.inf)
    # ties: lowest feature index, then lowest threshold
    flat = np.argmin(sse.T)
    j, pos = divmod(int(flat), m - 1)
    threshold = 0.5 * (xs[pos, j] + xs[pos + 1, j])
    if not threshold < xs[pos + 1, j]:
        threshold = xs[pos, j]
    return j, threshold


def _grow_tree(X: np.ndarray, y: np.ndarray) -> RegressionTree:
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(len(y)))]
    while stack:
        node, idx = stack.pop()
        yy = y[idx]
        value[node] = float(yy.sum()) / len(yy)
        if len(idx) < 2 or yy.max() == yy.min():
            continue
        split = _best_split(X[idx], yy)
        if split is None:
            continue
        j, thr = split
        mask = X[idx, j] <= thr
        feature[node], threshold[node] = j, thr
        l, r = new_node(), new_node()
        left[node], right[node] = l, r
        stack.append((r, idx[~mask]))
        stack.append((l, idx[mask]))
    return RegressionTree(np.asarray(feature), np.asarray(threshold), np.asarray(left),
                          np.asarray(right), np.asarray(value))


@dataclass(frozen=True)
class ForestModel:
    trees: tuple
    n_trees: int
    seed: int
    n_features: int


def forest_fit(X, targets, n_trees: int = 100, seed: int = 0) -> ForestModel:
    """Bootstrap forest of fully grown variance-reduction trees.

    Tree ``t`` draws its bootstrap sample from ``default_rng(seed + t)``.
    """
    X = np.asarray(X, dtype=float)
    t = np.asarray(targets, dtype=float)
    if len(t) < 2:
        raise ValueError("forest_fit needs at least two samples")
    if not np.all(np.isfinite(t)):
        raise ValueError("targets must be finite")
    n = len(t)
    trees = []
    for i in range(n_trees):
        rng = np.random.default_rng(seed + i)
        sample = rng.integers(0, n, size=n)
        trees.append(_grow_tree(X[sample], t[sample]))
    return ForestModel(tuple(trees), n_trees, seed, X.shape[1])


def forest_predict(model: ForestModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} input columns, got {X.shape}")
    per_tree = np.sort([tree.predict(X) for tree in model.trees], axis=0)
    # sorted before summing so the mean does not depend on tree order
    return per_tree.sum(axis=0) / len(model.trees)
