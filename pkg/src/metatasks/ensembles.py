"""Ensemble techniques simulated on stored prediction data.

Every technique consumes a :class:`~metatasks.model.PredictionMatrix` (and,
for the EPM-based selectors, preprocessed instance features) instead of
trainable base models. ``predict`` functions return ``(predictions,
confidences)`` with label codes and ``(k, C)`` confidence rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import metrics
from .learners import LogRegModel, forest_fit, forest_predict, logreg_fit, logreg_predict
from .model import PredictionMatrix


class TechniqueId(str, Enum):
    SBA = "dcs-sba"
    DCS = "dcs"
    DES = "des"
    STACKING = "stacking"
    VOTING = "voting"
    ENSEMBLE_SELECTION = "es"
    VBE = "vbe"
    VBA = "dcs-vba"

    @property
    def is_oracle(self) -> bool:
        return self in (TechniqueId.VBA, TechniqueId.VBE)

    @classmethod
    def parse(cls, token: str) -> "TechniqueId":
        token = token.strip().lower().replace("_", "-")
        aliases = {"ensemble-selection": "es", "sba": "dcs-sba", "vba": "dcs-vba"}
        return cls(aliases.get(token, token))


# report column order
ALL_TECHNIQUES = tuple(TechniqueId)


@dataclass
class TechniqueConfig:
    ensemble_size: int = 50
    es_metric: str = metrics.AUROC
    sba_metric: str = metrics.AUROC
    des_threshold: float = 0.5
    n_trees: int = 100
    logreg_max_iter: int = 1000
    logreg_l2: float = 1.0


@dataclass
class FittedTechnique:
    technique: TechniqueId
    n_models: int
    state: object = None
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------- voting

def vote_predict(pm: PredictionMatrix, models: Optional[np.ndarray] = None):
    """Hard majority vote.

    Ties go to the tied label with the highest summed confidence, then to the
    first label in class order. ``models`` optionally restricts the voters per
    instance with a ``(k, B)`` boolean mask. Confidences are vote shares.
    """
    k, B, C = pm.confidences.shape
    if B < 1:
        raise ValueError("voting needs at least one base model")
    mask = np.ones((k, B), dtype=bool) if models is None else np.asarray(models, dtype=bool)
    votes = np.zeros((k, C))
    rows = np.repeat(np.arange(k), B).reshape(k, B)
    np.add.at(votes, (rows[mask], pm.predictions[mask]), 1.0)
    summed = np.where(mask[:, :, None], pm.confidences, 0.0).sum(axis=1)
    tied = votes == votes.max(axis=1, keepdims=True)
    tiebreak = np.where(tied, summed, -np.inf)
    pred = np.argmax(tiebreak, axis=1)
    shares = votes / mask.sum(axis=1, keepdims=True)
    return pred, shares


# ---------------------------------------------------------------- stacking

def _stack_inputs(pm: PredictionMatrix) -> np.ndarray:
    return pm.confidences.reshape(pm.n_instances, pm.n_models * pm.n_classes)


def stacking_fit(pm_train: PredictionMatrix, y=None, config: TechniqueConfig = TechniqueConfig(),
                 seed: int = 0) -> LogRegModel:
    """Logistic regression on the flattened base-model confidences (no passthrough)."""
    y = pm_train.ground_truth if y is None else np.asarray(y)
    return logreg_fit(_stack_inputs(pm_train), y, range(pm_train.n_classes),
                      max_iter=config.logreg_max_iter, l2=config.logreg_l2, seed=seed)


def stacking_predict(model: LogRegModel, pm: PredictionMatrix):
    X = _stack_inputs(pm)
    if X.shape[1] != model.n_features:
        raise ValueError(f"stacking model was fit on {model.n_features} inputs, "
                         f"roster gives {X.shape[1]}")
    return logreg_predict(model, X)


# ---------------------------------------------------------------- ensemble selection

def ensemble_selection_fit(pm_train: PredictionMatrix, y=None, size: int = 50,
                           metric: str = metrics.AUROC) -> np.ndarray:
    """Greedy forward selection with replacement; returns selection frequencies."""
    if pm_train.n_models < 1:
        raise ValueError("ensemble selection needs at least one base model")
    if size < 1:
        raise ValueError("ensemble size must be >= 1")
    y = pm_train.ground_truth if y is None else np.asarray(y)
    B, C = pm_train.n_models, pm_train.n_classes
    conf = pm_train.confidences
    counts = np.zeros(B, dtype=np.int64)
    bag_sum = np.zeros((pm_train.n_instances, C))
    for it in range(size):
        best, best_score = -1, -np.inf
        for b in range(B):
            avg = (bag_sum + conf[:, b, :]) / (it + 1)
            s = metrics.score(metric, y, np.argmax(avg, axis=1), avg, C)
            if s > best_score:
                best, best_score = b, s
        counts[best] += 1
        bag_sum += conf[:, best, :]
    return counts / size


def weighted_average_predict(weights, pm: PredictionMatrix):
    w = np.asarray(weights, dtype=float)
    if w.shape != (pm.n_models,):
        raise ValueError(f"{len(w)} weights for {pm.n_models} base models")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights sum to {w.sum()}, expected 1")
    conf = np.einsum("b,kbc->kc", w, pm.confidences)
    return np.argmax(conf, axis=1), conf


# ---------------------------------------------------------------- EPM-based selection

def epm_targets(pm: PredictionMatrix) -> np.ndarray:
    """Per instance and model: 1 - confidence on the true class, shape (k, B)."""
    k = pm.n_instances
    return 1.0 - pm.confidences[np.arange(k), :, pm.ground_truth]


def epm_fit(features_train: np.ndarray, pm_train: PredictionMatrix, n_trees: int = 100,
            seed: int = 0) -> list:
    errors = epm_targets(pm_train)
    return [forest_fit(features_train, errors[:, b], n_trees=n_trees, seed=seed + b * n_trees)
            for b in range(pm_train.n_models)]


def predicted_errors(epms, features: np.ndarray) -> np.ndarray:
    return np.column_stack([forest_predict(f, features) for f in epms])


def dcs_predict(epms, features: np.ndarray, pm: PredictionMatrix):
    if len(epms) != pm.n_models:
        raise ValueError(f"{len(epms)} EPMs for {pm.n_models} base models")
    chosen = np.argmin(predicted_errors(epms, features), axis=1)
    k = np.arange(pm.n_instances)
    return pm.predictions[k, chosen], pm.confidences[k, chosen, :].copy()


def des_subset(errors, threshold_fraction: float = 0.5) -> np.ndarray:
    """Indices of models added, lowest predicted error first, until the
    accumulated error exceeds ``threshold_fraction`` of the total.

    The model that crosses the threshold is included; if the threshold is
    never exceeded (all-zero errors, fraction >= 1) every model is returned.
    """
    e = np.asarray(errors, dtype=float)
    order = np.argsort(e, kind="mergesort")
    cum = np.cumsum(e[order])
    limit = threshold_fraction * e.sum()
    crossed = np.flatnonzero(cum > limit)
    stop = crossed[0] + 1 if crossed.size else len(e)
    return order[:stop]


def des_predict(epms, features: np.ndarray, pm: PredictionMatrix, threshold_fraction: float = 0.5):
    if len(epms) != pm.n_models:
        raise ValueError(f"{len(epms)} EPMs for {pm.n_models} base models")
    err = predicted_errors(epms, features)
    mask = np.zeros((pm.n_instances, pm.n_models), dtype=bool)
    for i in range(pm.n_instances):
        mask[i, des_subset(err[i], threshold_fraction)] = True
    return vote_predict(pm, mask)


def dcs_vba_predict(pm: PredictionMatrix):
    return metrics.vba_rows(pm)


def vbe_predict(pm_test: PredictionMatrix, y_test=None, config: TechniqueConfig = TechniqueConfig(),
                seed: int = 0):
    """Stacking fit on the evaluation slice itself (an oracle baseline)."""
    model = stacking_fit(pm_test, y_test, config, seed)
    return stacking_predict(model, pm_test)


# ---------------------------------------------------------------- dispatch

def fit(technique, pm_train: PredictionMatrix, features_train: Optional[np.ndarray] = None,
        config: TechniqueConfig = TechniqueConfig(), seed: int = 0,
        epms: Optional[list] = None) -> FittedTechnique:
    """Fit ``technique`` on meta-train data.

    ``epms`` lets DCS and DES share already fitted error models.
    """
    t = TechniqueId.parse(technique) if isinstance(technique, str) else TechniqueId(technique)
    if pm_train.n_instances == 0:
        raise ValueError("empty meta-train slice")
    B = pm_train.n_models
    if t in (TechniqueId.VOTING, TechniqueId.VBA, TechniqueId.VBE):
        return FittedTechnique(t, B)
    if t is TechniqueId.SBA:
        return FittedTechnique(t, B, metrics.sba_index(pm_train, config.sba_metric))
    if t is TechniqueId.STACKING:
        return FittedTechnique(t, B, stacking_fit(pm_train, config=config, seed=seed))
    if t is TechniqueId.ENSEMBLE_SELECTION:
        return FittedTechnique(t, B, ensemble_selection_fit(pm_train, size=config.ensemble_size,
                                                            metric=config.es_metric))
    if features_train is None:
        raise ValueError(f"{t.value} needs instance features")
    if epms is None:
        epms = epm_fit(features_train, pm_train, config.n_trees, seed)
    return FittedTechnique(t, B, epms)


def predict(fitted: FittedTechnique, pm: PredictionMatrix, features: Optional[np.ndarray] = None,
            config: TechniqueConfig = TechniqueConfig(), seed: int = 0):
    t = fitted.technique
    if pm.n_models != fitted.n_models:
        raise ValueError(f"{t.value} was fit on {fitted.n_models} base models, got {pm.n_models}")
    if t is TechniqueId.VOTING:
        return vote_predict(pm)
    if t is TechniqueId.VBA:
        return dcs_vba_predict(pm)
    if t is TechniqueId.VBE:
        return vbe_predict(pm, config=config, seed=seed)
    if t is TechniqueId.SBA:
        b = fitted.state
        return pm.predictions[:, b].copy(), pm.confidences[:, b, :].copy()
    if t is TechniqueId.STACKING:
        return stacking_predict(fitted.state, pm)
    if t is TechniqueId.ENSEMBLE_SELECTION:
        return weighted_average_predict(fitted.state, pm)
    if features is None:
        raise ValueError(f"{t.value} needs instance features")
    if t is TechniqueId.DCS:
        return dcs_predict(fitted.state, features, pm)
    return des_predict(fitted.state, features, pm, config.des_threshold)
