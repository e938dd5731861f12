"""Scoring: AUROC, accuracy, VBA/SBA baselines and closed-gap normalization."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .model import PredictionMatrix

AUROC = "area_under_roc_curve"
ACCURACY = "accuracy"
METRIC_NAMES = (AUROC, ACCURACY)


class UndefinedMetricError(ValueError):
    pass


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    boundaries = np.flatnonzero(np.diff(xs)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(xs)]))
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(len(x), dtype=float)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def binary_auc(is_positive: np.ndarray, scores: np.ndarray) -> float:
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    is_positive = np.asarray(is_positive, dtype=bool)
    n_pos = int(is_positive.sum())
    n_neg = len(is_positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positives and negatives")
    ranks = _average_ranks(np.asarray(scores, dtype=float))
    u = ranks[is_positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _codes(ground_truth, class_labels) -> np.ndarray:
    y = np.asarray(ground_truth)
    if y.dtype.kind in "iu" and list(class_labels) == list(range(len(class_labels))):
        return y.astype(np.int64)
    lookup = {c: i for i, c in enumerate(class_labels)}
    try:
        return np.fromiter((lookup[v] for v in y.tolist()), dtype=np.int64, count=len(y))
    except KeyError as e:
        raise ValueError(f"ground-truth label {e.args[0]!r} not in class_labels") from None


def auroc(ground_truth, confidences, class_labels: Sequence) -> float:
    """Prevalence-weighted one-vs-rest AUROC.

    Classes without positives or without negatives in ``ground_truth`` are
    left out of the weighted average.
    """
    y = _codes(ground_truth, class_labels)
    conf = np.asarray(confidences, dtype=float)
    if conf.ndim != 2 or conf.shape != (len(y), len(class_labels)):
        raise ValueError(f"confidences shape {conf.shape} does not match "
                         f"({len(y)}, {len(class_labels)})")
    counts = np.bincount(y, minlength=len(class_labels))
    total, weighted = 0, 0.0
    for c, n_c in enumerate(counts):
        if n_c == 0 or n_c == len(y):
            continue
        weighted += n_c * binary_auc(y == c, conf[:, c])
        total += n_c
    if total == 0:
        raise UndefinedMetricError("AUROC undefined: fewer than two classes present")
    return weighted / total


def accuracy(ground_truth, predictions) -> float:
    y = np.asarray(ground_truth)
    p = np.asarray(predictions)
    if len(y) == 0:
        raise UndefinedMetricError("accuracy of an empty slice")
    if len(y) != len(p):
        raise ValueError("ground_truth and predictions differ in length")
    return float(np.mean(y == p))


def score(metric: str, ground_truth, predictions, confidences, n_classes: int) -> float:
    """Score label codes/confidences with a metric given by name."""
    if metric == AUROC:
        return auroc(ground_truth, confidences, list(range(n_classes)))
    if metric == ACCURACY:
        return accuracy(ground_truth, predictions)
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRIC_NAMES}")


def model_scores(pm: PredictionMatrix, metric: str = AUROC) -> np.ndarray:
    """Per-base-model metric on ``pm``; undefined scores become ``nan``."""
    out = np.full(pm.n_models, np.nan)
    for b in range(pm.n_models):
        try:
            out[b] = score(metric, pm.ground_truth, pm.predictions[:, b],
                           pm.confidences[:, b, :], pm.n_classes)
        except UndefinedMetricError:
            pass
    return out


def vba_rows(pm: PredictionMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Per instance, the rows of the model most confident in the true class.

    Models whose predicted label is correct take precedence, so the oracle is
    correct wherever any base model is (in the multiclass case the most
    confident model on the true class may still predict another class).
    Ties go to the lowest model index.
    """
    if pm.n_models < 1:
        raise ValueError("VBA needs at least one base model")
    k = pm.n_instances
    true_conf = pm.confidences[np.arange(k), :, pm.ground_truth]  # (k, B)
    correct = pm.predictions == pm.ground_truth[:, None]
    key = np.where(correct.any(axis=1, keepdims=True), np.where(correct, true_conf, -np.inf), true_conf)
    chosen = np.argmax(key, axis=1)
    return pm.predictions[np.arange(k), chosen], pm.confidences[np.arange(k), chosen, :]


def sba_index(pm_train: PredictionMatrix, metric: str = AUROC) -> int:
    if pm_train.n_models < 1:
        raise ValueError("SBA needs at least one base model")
    scores = model_scores(pm_train, metric)
    if np.all(np.isnan(scores)):
        raise UndefinedMetricError(f"{metric} undefined for every base model")
    return int(np.nanargmax(scores))


def closed_gap(tech: float, sba: float, vba: float) -> float:
    if vba == sba:
        raise UndefinedMetricError("closed gap undefined when VBA equals SBA")
    return (tech - sba) / (vba - sba)
