"""Synthetic OpenML responses for offline fixtures and demos.

:func:`synthetic_responses` renders tasks, datasets, split files, evaluation
listings, run descriptions and prediction files exactly as the client
requests them, so a cache directory filled by :func:`write_cache` replays a
full build with ``offline_mode=True``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence
from urllib.parse import urlsplit

import numpy as np

from .metrics import auroc
from .openml_client import ClientConfig, OpenMLClient

# run kinds understood by the generator
NORMAL = "normal"
WORSE_THAN_RANDOM = "worse_than_random"
UNEXPLAINABLE = "unexplainable"
DEGENERATE = "degenerate"
QUIRKY = "quirky"  # one precision-tie row and one row summing to 0.98
CSV_VARIANT = "csv_variant"
DUPLICATE = "duplicate"
MISSING_FILE = "missing_file"

FIXTURE_SUITE_ID = 99999


@dataclass
class SyntheticTask:
    task_id: int
    dataset_id: int
    name: str
    n_instances: int
    class_labels: tuple = ("no", "yes")
    n_numeric: int = 4
    n_categorical: int = 1
    missing_rate: float = 0.05
    n_folds: int = 10
    run_kinds: Sequence[str] = field(default_factory=lambda: [NORMAL] * 12)
    skill: float = 0.8  # logit margin of an average base model
    specialist: float = 2.5  # extra margin inside a model's own region
    noise_correlation: float = 0.6  # 1.0 makes all base models nearly identical
    seed: int = 0
    first_run_id: int = 0


def default_fixture_tasks() -> list[SyntheticTask]:
    """Three small tasks: two that survive default curation and one with no headroom."""
    binary_runs = [NORMAL, QUIRKY, NORMAL, DUPLICATE, CSV_VARIANT, NORMAL, UNEXPLAINABLE,
                   NORMAL, DEGENERATE, MISSING_FILE, NORMAL, WORSE_THAN_RANDOM, NORMAL, NORMAL]
    return [
        SyntheticTask(900001, 800001, "synth-binary", 240, ("no", "yes"), run_kinds=binary_runs,
                      seed=1, first_run_id=5000000),
        SyntheticTask(900002, 800002, "synth-multiclass", 270, ("alpha", "beta", "gamma"),
                      n_numeric=3, n_categorical=2, run_kinds=[NORMAL] * 11, seed=2,
                      first_run_id=6000000),
        SyntheticTask(900003, 800003, "synth-easy", 200, ("neg", "pos"),
                      run_kinds=[NORMAL] * 11, skill=7.0, specialist=0.0, noise_correlation=1.0,
                      seed=3, first_run_id=7000000),
    ]


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _fmt(v) -> str:
    return repr(float(v))


def _arff_value(v) -> str:
    if v is None:
        return "?"
    if isinstance(v, str):
        return "'" + v.replace("\\", "\\\\").replace("'", "\\'") + "'" if any(
            c in v for c in " ,'\"%{}") else v
    return _fmt(v)


def _arff(relation: str, attributes, rows) -> bytes:
    lines = [f"@RELATION {relation}", ""]
    for name, kind in attributes:
        if isinstance(kind, (tuple, list)):
            kind = "{" + ",".join(_arff_value(v) for v in kind) + "}"
        lines.append(f"@ATTRIBUTE {_arff_value(name)} {kind}")
    lines += ["", "@DATA"]
    lines += [",".join(_arff_value(v) for v in row) for row in rows]
    return ("\n".join(lines) + "\n").encode()


@dataclass
class _World:
    X_num: np.ndarray
    X_cat: list
    y: np.ndarray
    folds: np.ndarray
    region: np.ndarray


def _make_world(t: SyntheticTask, rng) -> _World:
    n, C = t.n_instances, len(t.class_labels)
    X_num = rng.normal(size=(n, t.n_numeric))
    cats = rng.integers(0, 3, size=(n, t.n_categorical))
    W = rng.normal(size=(t.n_numeric, C))
    logits = X_num @ W + rng.gumbel(size=(n, C)) * 0.7
    y = np.argmax(logits, axis=1)
    # guarantee every class a decent share
    for c in range(C):
        if np.sum(y == c) < n // (3 * C):
            y[rng.choice(n, n // (3 * C), replace=False)] = c
    folds = np.empty(n, dtype=np.int64)
    for c in range(C):
        members = rng.permutation(np.flatnonzero(y == c))
        folds[members] = (np.arange(len(members)) + c) % t.n_folds
    X_cat = [[None if rng.random() < t.missing_rate else "abc"[v] for v in col] for col in cats.T]
    X_num = np.where(rng.random(X_num.shape) < t.missing_rate, np.nan, X_num)
    region = np.floor(np.argsort(np.argsort(logits[:, 0])) / n * 4).astype(int)
    return _World(X_num, X_cat, y, folds, region)


def _model_confidences(t: SyntheticTask, w: _World, b: int, kind: str, rng) -> np.ndarray:
    n, C = t.n_instances, len(t.class_labels)
    onehot = np.eye(C)[w.y]
    own = (w.region == b % 4)
    shared = np.random.default_rng([t.seed, 99]).normal(size=(n, C))
    rho = min(t.noise_correlation, 0.9975)  # keep a sliver of per-model noise
    noise = np.sqrt(rho) * shared + np.sqrt(1.0 - rho) * rng.normal(size=(n, C))
    margin = t.skill * (0.8 + 0.4 * rng.random()) + t.specialist * own
    sign = -1.0 if kind == WORSE_THAN_RANDOM else 1.0
    return _softmax(sign * margin[:, None] * onehot + noise)


def _prediction_file(t: SyntheticTask, w: _World, conf: np.ndarray, kind: str, rng) -> bytes:
    labels = list(t.class_labels)
    n = t.n_instances
    pred = np.argmax(conf, axis=1)
    conf = conf.copy()
    if kind == DEGENERATE:
        # SVM-like: informative predictions, one constant confidence row
        pred = np.where(rng.random(n) < 0.8, w.y, rng.integers(0, len(labels), n))
        conf[:] = np.linspace(0.7, 0.3, len(labels)) / np.linspace(0.7, 0.3, len(labels)).sum()
    elif kind == UNEXPLAINABLE:
        i = int(rng.integers(0, n))
        conf[i] = 0.0
        conf[i, pred[i]] = 0.1
        conf[i, (pred[i] + 1) % len(labels)] = 0.9
    elif kind == QUIRKY:
        i, j = rng.choice(n, 2, replace=False)
        conf[i] = 0.0
        a, b_ = int(pred[i]), (int(pred[i]) + 1) % len(labels)
        conf[i, a], conf[i, b_] = 0.4999999997, 0.5000000003
        conf[j] = conf[j] * 0.98
    order = rng.permutation(n)  # OpenML files are grouped by fold, not row order
    order = order[np.argsort(w.folds[order], kind="mergesort")]
    if kind == CSV_VARIANT:
        header = ["repeat", "fold", "row_id", "pred"] + [f"confidence_{c}" for c in labels]
        lines = [",".join(header)]
        for i in order:
            lines.append(",".join(["0", str(w.folds[i]), str(i), labels[pred[i]]]
                                  + [_fmt(v) for v in conf[i]]))
        return ("\n".join(lines) + "\n").encode()
    attributes = ([("repeat", "NUMERIC"), ("fold", "NUMERIC"), ("row_id", "NUMERIC")]
                  + [(f"confidence.{c}", "NUMERIC") for c in labels]
                  + [("prediction", labels), ("correct", labels)])
    rows = [[0.0, float(w.folds[i]), float(i)] + [float(v) for v in conf[i]]
            + [labels[pred[i]], labels[w.y[i]]] for i in order]
    return _arff("predictions", attributes, rows)


def _task_responses(t: SyntheticTask, client: OpenMLClient, origin: str) -> tuple[dict, list]:
    rng = np.random.default_rng(t.seed)
    w = _make_world(t, rng)
    labels = list(t.class_labels)
    out = {}
    data_url = f"{origin}/data/v1/download/{t.dataset_id}/{t.name}.arff"
    split_url = f"{origin}/api_splits/get/{t.task_id}/Task_{t.task_id}_splits.arff"
    out[client.task_url(t.task_id)] = json.dumps({"task": {
        "task_id": str(t.task_id), "task_name": f"Task {t.task_id}: {t.name}",
        "task_type_id": "1", "task_type": "Supervised Classification",
        "input": [
            {"name": "source_data", "data_set": {"data_set_id": str(t.dataset_id),
                                                 "target_feature": "class"}},
            {"name": "estimation_procedure", "estimation_procedure": {
                "id": "1", "type": "crossvalidation", "data_splits_url": split_url,
                "parameter": [{"name": "number_repeats", "value": "1"},
                              {"name": "number_folds", "value": str(t.n_folds)},
                              {"name": "percentage"},
                              {"name": "stratified_sampling", "value": "true"}]}},
            {"name": "evaluation_measures", "evaluation_measures": {}},
        ]}}, indent=1).encode()
    out[client.dataset_url(t.dataset_id)] = json.dumps({"data_set_description": {
        "id": str(t.dataset_id), "name": t.name, "version": "1", "format": "ARFF",
        "file_id": str(t.dataset_id), "default_target_attribute": "class", "url": data_url,
        "status": "active"}}, indent=1).encode()

    attributes = ([(f"num{j}", "NUMERIC") for j in range(t.n_numeric)]
                  + [(f"cat{j}", ("a", "b", "c")) for j in range(t.n_categorical)]
                  + [("class", labels)])
    rows = []
    for i in range(t.n_instances):
        rows.append([None if np.isnan(v) else float(v) for v in w.X_num[i]]
                    + [col[i] for col in w.X_cat] + [labels[w.y[i]]])
    out[data_url] = _arff(t.name, attributes, rows)

    split_rows = []
    for fold in range(t.n_folds):
        for i in range(t.n_instances):
            split_rows.append(["TRAIN" if w.folds[i] != fold else "TEST", float(i), 0.0, float(fold)])
    out[split_url] = _arff(f"{t.name}_splits", [("type", ("TRAIN", "TEST")), ("rowid", "NUMERIC"),
                                                  ("repeat", "NUMERIC"), ("fold", "NUMERIC")],
                           split_rows)

    evaluations = []
    previous = None
    for b, kind in enumerate(t.run_kinds):
        run_id = t.first_run_id + b
        model_rng = np.random.default_rng([t.seed, b])
        conf = _model_confidences(t, w, b, kind, model_rng)
        flow_id, setup_id = 100 + b % 5, 10000 + t.task_id % 1000 * 100 + b
        value = round(auroc(w.y, conf, range(len(labels))), 6)
        if kind == DUPLICATE and previous is not None:
            flow_id, setup_id, value = previous[0], previous[1], round(previous[2] - 1e-4, 6)
        previous = (flow_id, setup_id, value)
        evaluations.append({
            "run_id": str(run_id), "task_id": str(t.task_id), "setup_id": str(setup_id),
            "flow_id": str(flow_id), "flow_name": f"synthetic.flow{flow_id}(1)",
            "data_id": str(t.dataset_id), "data_name": t.name,
            "function": "area_under_roc_curve", "upload_time": "2022-01-01 00:00:00",
            "value": f"{value:.6f}"})
        files = [{"did": "-1", "file_id": str(run_id * 10), "name": "description",
                  "url": f"{origin}/data/download/{run_id * 10}/description.xml"}]
        if kind != MISSING_FILE:
            pred_url = f"{origin}/data/download/{run_id * 10 + 1}/predictions.arff"
            files.append({"did": "-1", "file_id": str(run_id * 10 + 1), "name": "predictions",
                          "url": pred_url})
            out[pred_url] = _prediction_file(t, w, conf, kind, model_rng)
        out[client.run_url(run_id)] = json.dumps({"run": {
            "run_id": str(run_id), "task_id": str(t.task_id), "flow_id": str(flow_id),
            "flow_name": f"synthetic.flow{flow_id}(1)", "setup_id": str(setup_id),
            "output_data": {"file": files}}}, indent=1).encode()
    return out, evaluations


def synthetic_responses(tasks: Sequence[SyntheticTask], base_url: str = ClientConfig.base_url,
                        page_size: int = 1000, suites: dict | None = None) -> dict[str, bytes]:
    """URL -> response body for every request a build of ``tasks`` makes."""
    client = OpenMLClient(ClientConfig(base_url=base_url, page_size=page_size, cache_dir="/nonexistent"))
    parts = urlsplit(client.config.base_url)
    origin = f"{parts.scheme}://{parts.netloc}"
    out: dict[str, bytes] = {}
    for t in tasks:
        responses, evaluations = _task_responses(t, client, origin)
        out.update(responses)
        evaluations.sort(key=lambda e: -float(e["value"]))
        for offset in range(0, max(len(evaluations), 1), page_size):
            page = evaluations[offset:offset + page_size]
            out[client.evaluations_url(t.task_id, "area_under_roc_curve", offset)] = json.dumps(
                {"evaluations": {"evaluation": page}}, indent=1).encode()
    for suite_id, task_ids in (suites or {}).items():
        out[client.suite_url(suite_id)] = json.dumps({"study": {
            "id": str(suite_id), "alias": f"synthetic-{suite_id}", "main_entity_type": "task",
            "tasks": {"task_id": [str(t) for t in task_ids]}}}, indent=1).encode()
    return out


def write_cache(responses: dict[str, bytes], cache_dir, base_url: str = ClientConfig.base_url) -> None:
    client = OpenMLClient(ClientConfig(base_url=base_url, cache_dir=cache_dir))
    for url, body in responses.items():
        client.store(url, body)
