"""Small builders shared by the test modules."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from metatasks.model import (BaseModelRun, BuildInfo, DiscrepancyClass, FeatureSpec, Metatask,
                             PredictionMatrix)

FIXTURE_CACHE = Path(__file__).parent / "fixtures" / "openml_cache"
PREDICTION_CORPUS = Path(__file__).parent / "fixtures" / "predictions"

_C, _P, _R = DiscrepancyClass.CONSISTENT, DiscrepancyClass.PRECISION_FIXED, DiscrepancyClass.RENORMALIZED
_N, _U = DiscrepancyClass.NONREPRESENTATIVE_FIXED, DiscrepancyClass.UNEXPLAINABLE

# expected per-row classes of the prediction corpus, by row_id
CORPUS = {
    "arff_prediction_dot.arff": [_C, _P, _R, _C],
    "csv_pred_underscore.csv": [_C] * 4,
    "csv_rowid_fold.csv": [_C] * 4,
    "degenerate_constant.csv": [_C, _N, _N, _C, _N],
    "unexplainable.csv": [_C, _U, _C, _C],
}


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    """Print and remember one PASS/FAIL line, then fail the calling test if needed."""
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def random_confidences(rng, shape):
    raw = rng.random(shape) + 1e-3
    return raw / raw.sum(axis=-1, keepdims=True)


def make_pm(confidences, ground_truth, predictions=None, class_labels=None) -> PredictionMatrix:
    """PredictionMatrix from a (k, B, C) confidence tensor; predictions default to argmax."""
    conf = np.asarray(confidences, dtype=float)
    k, B, C = conf.shape
    preds = np.argmax(conf, axis=2) if predictions is None else np.asarray(predictions)
    labels = tuple(class_labels or (f"c{i}" for i in range(C)))
    return PredictionMatrix(
        indices=np.arange(k), predictions=preds.astype(np.int64), confidences=conf,
        ground_truth=np.asarray(ground_truth, dtype=np.int64),
        features=pd.DataFrame(index=range(k)), class_labels=labels,
        run_ids=tuple(range(1, B + 1)))


def random_pm(rng, k=None, B=None, C=None) -> PredictionMatrix:
    k = k or int(rng.integers(4, 40))
    B = B or int(rng.integers(1, 6))
    C = C or int(rng.integers(2, 5))
    y = rng.integers(0, C, size=k)
    y[:C] = np.arange(C)  # every class present
    conf = random_confidences(rng, (k, B, C))
    return make_pm(conf, y)


def make_metatask(n=40, n_models=3, labels=("no", "yes"), n_folds=4, seed=0,
                  corrupted=(), task_id=1) -> Metatask:
    """A small valid metatask with one numeric and one categorical feature."""
    rng = np.random.default_rng(seed)
    schema = (FeatureSpec("x", "numeric", allows_missing=True),
              FeatureSpec("colour", "categorical", ("red", "green"), allows_missing=True))
    x = rng.normal(size=n)
    x[1] = np.nan
    colour = pd.Categorical(rng.choice(["red", "green"], size=n), categories=["red", "green"])
    colour[2] = np.nan
    instances = pd.DataFrame({"x": x, "colour": colour})
    C = len(labels)
    y_codes = np.arange(n) % C
    ground_truth = np.asarray(labels, dtype=object)[y_codes]
    models = []
    for b in range(n_models):
        conf = random_confidences(rng, (n, C))
        conf[np.arange(n), y_codes] += rng.random(n) * (b + 1)
        conf /= conf.sum(axis=1, keepdims=True)
        disc = np.full(n, DiscrepancyClass.CONSISTENT.value, dtype=object)
        if b in corrupted:
            disc[0] = DiscrepancyClass.UNEXPLAINABLE.value
        models.append(BaseModelRun(
            run_id=100 + b, flow_name=f"flow{b}", flow_id=10 + b, setup_id=20 + b,
            metric_score=0.5 + 0.01 * b,
            predictions=np.asarray(labels, dtype=object)[np.argmax(conf, axis=1)],
            confidences=conf, discrepancy=disc, corrupted=b in corrupted))
    return Metatask(
        task_id=task_id, dataset_name="toy", class_labels=tuple(labels), target_name="class",
        feature_schema=schema, instances=instances, ground_truth=ground_truth,
        fold_of_instance=np.arange(n) % n_folds, n_folds=n_folds, base_models=tuple(models),
        build_info=BuildInfo(tool_version="test", fetch_timestamp="2024-01-01T00:00:00Z"))
