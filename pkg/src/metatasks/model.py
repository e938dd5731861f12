"""Metatask data model and its on-disk directory format.

A metatask directory looks like::

    meta.json                 metadata, schema, folds, base-model roster
    dataset.csv               features + target, header row
    predictions/run_<id>.csv  instance_index, prediction, confidence.<label>...
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

FORMAT_VERSION = 1


class MetataskValidationError(ValueError):
    """A metatask violates one of its invariants."""


class MetataskParseError(ValueError):
    """A metatask directory could not be read."""


class DiscrepancyClass(str, Enum):
    CONSISTENT = "consistent"
    PRECISION_FIXED = "precision_fixed"
    RENORMALIZED = "renormalized"
    NONREPRESENTATIVE_FIXED = "nonrepresentative_fixed"
    UNEXPLAINABLE = "unexplainable"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str  # "numeric" or "categorical"
    categories: tuple[str, ...] = ()
    allows_missing: bool = False

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise MetataskValidationError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and not self.categories:
            raise MetataskValidationError(f"feature {self.name!r}: categorical feature without categories")


@dataclass(frozen=True, eq=False)
class BaseModelRun:
    """One OpenML run with its (repaired) per-instance prediction data.

    ``predictions`` holds class labels, ``confidences`` is ``(n, n_classes)`` in
    the metatask's ``class_labels`` order and ``discrepancy`` holds one
    :class:`DiscrepancyClass` value per instance.
    """

    run_id: int
    flow_name: str
    flow_id: int
    setup_id: int
    metric_score: float
    predictions: np.ndarray
    confidences: np.ndarray
    discrepancy: np.ndarray
    corrupted: bool = False

    @property
    def repaired(self) -> bool:
        return bool(np.any(
            (self.discrepancy != DiscrepancyClass.CONSISTENT.value)
            & (self.discrepancy != DiscrepancyClass.UNEXPLAINABLE.value)))

    def discrepancy_counts(self) -> dict[str, int]:
        values, counts = np.unique(self.discrepancy.astype(str), return_counts=True)
        return {str(v): int(c) for v, c in zip(values, counts)}


@dataclass(frozen=True)
class BuildInfo:
    tool_version: str
    fetch_timestamp: str
    ranking_metric: str = "area_under_roc_curve"
    top_n: int = 50
    source_suite: Optional[int] = None
    prediction_hashes: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.top_n < 1:
            raise MetataskValidationError("build_info.top_n must be >= 1")


@dataclass(frozen=True)
class BenchmarkSpec:
    """Reproducible recipe for a curated benchmark."""

    task_ids: tuple[int, ...] = ()
    gap_threshold: float = 0.05
    min_base_models: int = 10
    drop_worse_than_random: bool = True
    drop_corrupted: bool = True
    split_ratio: float = 0.5
    seed: int = 0
    ranking_metric: str = "area_under_roc_curve"
    top_n: int = 50
    tool_version: str = ""

    def __post_init__(self):
        if not 0 < self.split_ratio < 1:
            raise ValueError(f"split_ratio must be in (0, 1), got {self.split_ratio}")
        if self.gap_threshold < 0:
            raise ValueError(f"gap_threshold must be >= 0, got {self.gap_threshold}")

    def to_json(self) -> str:
        d = self.__dict__.copy()
        d["task_ids"] = list(self.task_ids)
        return json.dumps(d, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "BenchmarkSpec":
        d = json.loads(text)
        d["task_ids"] = tuple(d.get("task_ids", ()))
        return cls(**d)


@dataclass(frozen=True)
class PredictionMatrix:
    """Aligned prediction data of ``k`` instances and ``B`` base models.

    Labels are encoded as integer codes into ``class_labels``.
    """

    indices: np.ndarray  # (k,) instance indices into the metatask
    predictions: np.ndarray  # (k, B) int
    confidences: np.ndarray  # (k, B, C) float
    ground_truth: np.ndarray  # (k,) int
    features: pd.DataFrame  # k rows
    class_labels: tuple[str, ...]
    run_ids: tuple[int, ...]

    @property
    def n_instances(self) -> int:
        return self.predictions.shape[0]

    @property
    def n_models(self) -> int:
        return self.predictions.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_labels)

    def subset(self, rows) -> "PredictionMatrix":
        rows = np.asarray(rows, dtype=int)
        return replace(
            self,
            indices=self.indices[rows],
            predictions=self.predictions[rows],
            confidences=self.confidences[rows],
            ground_truth=self.ground_truth[rows],
            features=self.features.iloc[rows],
        )


@dataclass(frozen=True, eq=False)
class Metatask:
    task_id: int
    dataset_name: str
    class_labels: tuple[str, ...]
    target_name: str
    feature_schema: tuple[FeatureSpec, ...]
    instances: pd.DataFrame
    ground_truth: np.ndarray
    fold_of_instance: np.ndarray
    n_folds: int
    base_models: tuple[BaseModelRun, ...]
    build_info: BuildInfo

    @property
    def n_instances(self) -> int:
        return len(self.ground_truth)

    def fold_indices(self, fold: int) -> np.ndarray:
        if not 0 <= fold < self.n_folds:
            raise IndexError(f"fold {fold} out of range [0, {self.n_folds})")
        return np.flatnonzero(self.fold_of_instance == fold)

    def with_base_models(self, base_models: Sequence[BaseModelRun]) -> "Metatask":
        return replace(self, base_models=tuple(base_models))

    def validate(self, allow_empty_roster: bool = False) -> None:
        validate_metatask(self, allow_empty_roster=allow_empty_roster)


def validate_metatask(m: Metatask, allow_empty_roster: bool = False) -> None:
    n = len(m.ground_truth)
    if len(m.fold_of_instance) != n:
        raise MetataskValidationError(
            f"fold_of_instance: length {len(m.fold_of_instance)} != {n} instances")
    if len(m.instances) != n:
        raise MetataskValidationError(f"instances: {len(m.instances)} rows != {n} instances")
    if len(set(m.class_labels)) != len(m.class_labels) or not m.class_labels:
        raise MetataskValidationError("class_labels: must be non-empty and distinct")
    names = [f.name for f in m.feature_schema]
    if len(set(names)) != len(names):
        raise MetataskValidationError("feature_schema: duplicate feature names")
    if list(m.instances.columns) != names:
        raise MetataskValidationError("instances: columns do not match feature_schema")
    labels = set(m.class_labels)
    bad = [v for v in pd.unique(m.ground_truth) if v not in labels]
    if bad:
        raise MetataskValidationError(f"ground_truth: labels {bad!r} not in class_labels")
    folds = np.asarray(m.fold_of_instance)
    if n and (folds.min() < 0 or folds.max() >= m.n_folds):
        raise MetataskValidationError(f"fold_of_instance: values outside [0, {m.n_folds})")
    if not m.base_models and not allow_empty_roster:
        raise MetataskValidationError("base_models: roster is empty")
    seen = set()
    C = len(m.class_labels)
    for bm in m.base_models:
        where = f"base_models[run_id={bm.run_id}]"
        if bm.run_id in seen:
            raise MetataskValidationError(f"{where}: duplicate run_id")
        seen.add(bm.run_id)
        if len(bm.predictions) != n or bm.confidences.shape != (n, C) or len(bm.discrepancy) != n:
            raise MetataskValidationError(f"{where}: prediction data does not cover {n} instances")
        bad = [v for v in pd.unique(bm.predictions) if v not in labels]
        if bad:
            raise MetataskValidationError(f"{where}.predictions: labels {bad!r} not in class_labels")
        if not np.all(np.isfinite(bm.confidences)):
            raise MetataskValidationError(f"{where}.confidences: non-finite values")
        ok = bm.discrepancy != DiscrepancyClass.UNEXPLAINABLE.value
        sums = bm.confidences[ok].sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            raise MetataskValidationError(f"{where}.confidences: rows do not sum to 1")


def encode_labels(values, class_labels: Sequence[str]) -> np.ndarray:
    lookup = {label: i for i, label in enumerate(class_labels)}
    try:
        return np.fromiter((lookup[v] for v in values), dtype=np.int64, count=len(values))
    except KeyError as e:
        raise ValueError(f"label {e.args[0]!r} not in class_labels") from None


def slice_metatask(m: Metatask, instance_indices, drop_corrupted: bool = False) -> PredictionMatrix:
    idx = np.asarray(instance_indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= m.n_instances):
        raise IndexError("instance index out of range")
    if len(np.unique(idx)) != len(idx):
        raise ValueError("instance indices contain duplicates")
    models = [bm for bm in m.base_models if not (drop_corrupted and bm.corrupted)]
    C = len(m.class_labels)
    k, B = len(idx), len(models)
    preds = np.empty((k, B), dtype=np.int64)
    conf = np.empty((k, B, C), dtype=float)
    for b, bm in enumerate(models):
        preds[:, b] = encode_labels(bm.predictions[idx], m.class_labels)
        conf[:, b, :] = bm.confidences[idx]
    return PredictionMatrix(
        indices=idx,
        predictions=preds,
        confidences=conf,
        ground_truth=encode_labels(m.ground_truth[idx], m.class_labels),
        features=m.instances.iloc[idx],
        class_labels=tuple(m.class_labels),
        run_ids=tuple(bm.run_id for bm in models),
    )


# ---------------------------------------------------------------- serialization

def _fmt_float(x: float) -> str:
    return repr(float(x))


def _csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def _dataset_rows(m: Metatask):
    yield [f.name for f in m.feature_schema] + [m.target_name]
    cols = []
    for f in m.feature_schema:
        col = m.instances[f.name]
        if f.kind == "numeric":
            cols.append(["" if math.isnan(v) else _fmt_float(v) for v in col.to_numpy(dtype=float)])
        else:
            cols.append(["" if pd.isna(v) else str(v) for v in col.astype(object)])
    cols.append([str(v) for v in m.ground_truth])
    yield from zip(*cols) if cols else ()


def _prediction_rows(bm: BaseModelRun, class_labels):
    yield ["instance_index", "prediction"] + [f"confidence.{c}" for c in class_labels]
    for i, (p, row) in enumerate(zip(bm.predictions, bm.confidences)):
        yield [str(i), str(p)] + [_fmt_float(v) for v in row]


def _meta_dict(m: Metatask) -> dict:
    roster = []
    for bm in m.base_models:
        flagged = {}
        for cls in DiscrepancyClass:
            if cls is DiscrepancyClass.CONSISTENT:
                continue
            where = np.flatnonzero(bm.discrepancy == cls.value)
            if where.size:
                flagged[cls.value] = [int(i) for i in where]
        roster.append({
            "run_id": int(bm.run_id),
            "flow_id": int(bm.flow_id),
            "flow_name": bm.flow_name,
            "setup_id": int(bm.setup_id),
            "metric_score": float(bm.metric_score),
            "corrupted": bool(bm.corrupted),
            "repaired": bm.repaired,
            "discrepancy_counts": bm.discrepancy_counts(),
            "discrepancy_rows": flagged,
            "predictions_file": f"predictions/run_{bm.run_id}.csv",
        })
    bi = m.build_info
    return {
        "format_version": FORMAT_VERSION,
        "task_id": int(m.task_id),
        "dataset_name": m.dataset_name,
        "target_name": m.target_name,
        "class_labels": list(m.class_labels),
        "n_instances": m.n_instances,
        "n_folds": int(m.n_folds),
        "feature_schema": [
            {"name": f.name, "kind": f.kind, "categories": list(f.categories),
             "allows_missing": bool(f.allows_missing)}
            for f in m.feature_schema
        ],
        "fold_of_instance": [int(v) for v in m.fold_of_instance],
        "build_info": {
            "tool_version": bi.tool_version,
            "fetch_timestamp": bi.fetch_timestamp,
            "ranking_metric": bi.ranking_metric,
            "top_n": int(bi.top_n),
            "source_suite": bi.source_suite,
            "prediction_hashes": {str(k): v for k, v in sorted(bi.prediction_hashes.items())},
        },
        "base_models": roster,
    }


def save_metatask(m: Metatask, directory) -> None:
    """Write ``m`` to ``directory``; on failure nothing is left behind."""
    m.validate()
    directory = Path(directory)
    directory.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{directory.name}.", dir=directory.parent))
    try:
        (tmp / "predictions").mkdir()
        _write_text(tmp / "meta.json", json.dumps(_meta_dict(m), indent=2, ensure_ascii=False) + "\n")
        _write_text(tmp / "dataset.csv", _csv_text(_dataset_rows(m)))
        for bm in m.base_models:
            _write_text(tmp / "predictions" / f"run_{bm.run_id}.csv",
                        _csv_text(_prediction_rows(bm, m.class_labels)))
        if directory.exists():
            shutil.rmtree(directory)
        os.replace(tmp, directory)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _read_csv(path: Path) -> list[list[str]]:
    if not path.is_file():
        raise MetataskParseError(f"{path}: missing file")
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.reader(fh))


def _parse_float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise MetataskParseError(f"{where}: not a number: {text!r}") from None


def load_metatask(directory) -> Metatask:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.is_file():
        raise MetataskParseError(f"{meta_path}: missing file")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        class_labels = tuple(meta["class_labels"])
        schema = tuple(
            FeatureSpec(f["name"], f["kind"], tuple(f.get("categories", ())), bool(f.get("allows_missing")))
            for f in meta["feature_schema"])
        target_name = meta["target_name"]
        folds = np.asarray(meta["fold_of_instance"], dtype=np.int64)
        n = int(meta.get("n_instances", len(folds)))
        bi = meta["build_info"]
        build_info = BuildInfo(
            tool_version=bi["tool_version"], fetch_timestamp=bi["fetch_timestamp"],
            ranking_metric=bi["ranking_metric"], top_n=int(bi["top_n"]),
            source_suite=bi.get("source_suite"),
            prediction_hashes={int(k): v for k, v in bi.get("prediction_hashes", {}).items()})
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise MetataskParseError(f"{meta_path}: schema mismatch ({e!r})") from None
    except MetataskValidationError as e:
        raise MetataskParseError(f"{meta_path}: {e}") from None

    dataset_path = directory / "dataset.csv"
    rows = _read_csv(dataset_path)
    expected_header = [f.name for f in schema] + [target_name]
    if not rows or rows[0] != expected_header:
        raise MetataskParseError(f"{dataset_path}: header does not match feature_schema + target")
    body = rows[1:]
    if len(body) != n:
        raise MetataskParseError(f"{dataset_path}: {len(body)} rows, expected {n}")
    labels = set(class_labels)
    data = {}
    for j, f in enumerate(schema):
        if f.kind == "numeric":
            data[f.name] = np.array(
                [math.nan if r[j] == "" else _parse_float(r[j], f"{dataset_path}:{i + 2}")
                 for i, r in enumerate(body)], dtype=float)
        else:
            values = [None if r[j] == "" else r[j] for r in body]
            data[f.name] = pd.Categorical(values, categories=list(f.categories))
    instances = pd.DataFrame(data, columns=[f.name for f in schema])
    ground_truth = np.empty(n, dtype=object)
    for i, r in enumerate(body):
        if len(r) != len(expected_header):
            raise MetataskParseError(f"{dataset_path}:{i + 2}: expected {len(expected_header)} fields")
        if r[-1] not in labels:
            raise MetataskParseError(f"{dataset_path}:{i + 2}: target label {r[-1]!r} not in class_labels")
        ground_truth[i] = r[-1]

    base_models = []
    for entry in meta["base_models"]:
        base_models.append(_load_run(directory, entry, class_labels, n))

    m = Metatask(
        task_id=int(meta["task_id"]), dataset_name=meta["dataset_name"], class_labels=class_labels,
        target_name=target_name, feature_schema=schema, instances=instances,
        ground_truth=ground_truth, fold_of_instance=folds, n_folds=int(meta["n_folds"]),
        base_models=tuple(base_models), build_info=build_info)
    try:
        m.validate()
    except MetataskValidationError as e:
        raise MetataskParseError(f"{directory}: {e}") from None
    return m


def _load_run(directory: Path, entry: dict, class_labels, n: int) -> BaseModelRun:
    path = directory / entry.get("predictions_file", f"predictions/run_{entry['run_id']}.csv")
    rows = _read_csv(path)
    header = ["instance_index", "prediction"] + [f"confidence.{c}" for c in class_labels]
    if not rows or rows[0] != header:
        raise MetataskParseError(f"{path}: unexpected header {rows[0] if rows else []!r}")
    C = len(class_labels)
    labels = set(class_labels)
    preds = np.empty(n, dtype=object)
    conf = np.empty((n, C), dtype=float)
    seen = np.zeros(n, dtype=bool)
    for line, r in enumerate(rows[1:], start=2):
        if len(r) != C + 2:
            raise MetataskParseError(f"{path}:{line}: expected {C + 2} fields")
        try:
            i = int(r[0])
        except ValueError:
            raise MetataskParseError(f"{path}:{line}: bad instance_index {r[0]!r}") from None
        if not 0 <= i < n or seen[i]:
            raise MetataskParseError(f"{path}:{line}: instance_index {i} out of range or repeated")
        if r[1] not in labels:
            raise MetataskParseError(f"{path}:{line}: prediction {r[1]!r} not in class_labels")
        seen[i] = True
        preds[i] = r[1]
        conf[i] = [_parse_float(v, f"{path}:{line}") for v in r[2:]]
    if not seen.all():
        missing = np.flatnonzero(~seen)
        raise MetataskParseError(
            f"{path}: missing instance_index {missing[:10].tolist()}"
            + (" ..." if missing.size > 10 else ""))

    discrepancy = np.full(n, DiscrepancyClass.CONSISTENT.value, dtype=object)
    for cls, where in entry.get("discrepancy_rows", {}).items():
        discrepancy[np.asarray(where, dtype=np.int64)] = DiscrepancyClass(cls).value
    if entry.get("repaired"):
        ok = discrepancy != DiscrepancyClass.UNEXPLAINABLE.value
        sums = conf.sum(axis=1)
        fix = ok & (np.abs(sums - 1.0) > 1e-12) & (sums > 0)
        conf[fix] /= sums[fix, None]
    return BaseModelRun(
        run_id=int(entry["run_id"]), flow_name=entry["flow_name"], flow_id=int(entry["flow_id"]),
        setup_id=int(entry["setup_id"]), metric_score=float(entry["metric_score"]),
        predictions=preds, confidences=conf, discrepancy=discrepancy,
        corrupted=bool(entry["corrupted"]))


def find_metatask_dirs(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        return []
    return sorted(p for p in root.iterdir() if (p / "meta.json").is_file())
