"""Minimal read-only OpenML REST client with an on-disk response cache.

Every successful GET is stored under ``cache_dir`` keyed by its URL (without
the API key). With a warm cache and ``offline_mode=True`` all calls are
replayed from disk and never touch the network.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional
from urllib.parse import quote, urlsplit

import numpy as np
import pandas as pd
import requests

from . import curation
from .arff import ArffParseError, parse_arff
from .model import FeatureSpec

log = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://www.openml.org/api/v1"
CLASSIFICATION_TASK_TYPE = 1


class OpenMLError(Exception):
    pass


class TransportError(OpenMLError):
    pass


class OfflineCacheMiss(TransportError):
    pass


class HTTPStatusError(TransportError):
    def __init__(self, url: str, status: int, body: str = ""):
        self.url, self.status, self.body = url, status, body
        super().__init__(f"HTTP {status} for {url}: {body[:200]}")


class UnknownTaskError(OpenMLError):
    pass


class UnsupportedTaskError(OpenMLError):
    pass


class UnknownSuiteError(OpenMLError):
    pass


class MissingPredictionsError(OpenMLError):
    pass


class OpenMLParseError(OpenMLError, ValueError):
    pass


@dataclass
class ClientConfig:
    base_url: str = DEFAULT_BASE_URL
    api_key: Optional[str] = None
    cache_dir: Path = Path("~/.cache/metatasks/openml")
    max_parallel: int = 4
    max_attempts: int = 3
    backoff: float = 1.0
    offline_mode: bool = False
    page_size: int = 1000
    timeout: float = 60.0

    def __post_init__(self):
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        self.cache_dir = Path(self.cache_dir).expanduser()
        self.base_url = self.base_url.rstrip("/")

    @classmethod
    def from_env(cls, **overrides) -> "ClientConfig":
        env = {}
        if os.environ.get("OPENML_API_KEY"):
            env["api_key"] = os.environ["OPENML_API_KEY"]
        if os.environ.get("ASSEMBLED_CACHE_DIR"):
            env["cache_dir"] = os.environ["ASSEMBLED_CACHE_DIR"]
        env.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**env)


@dataclass(frozen=True)
class TaskDescriptor:
    task_id: int
    dataset_id: int
    task_type: str
    n_folds: int
    n_repeats: int
    target_name: str
    split_file_url: str
    estimation_type: str = "crossvalidation"


@dataclass(frozen=True)
class RunSummary:
    run_id: int
    flow_id: int
    flow_name: str
    setup_id: int
    metric_value: float
    prediction_file_url: Optional[str] = None


@dataclass
class DatasetBundle:
    dataset_id: int
    name: str
    target_name: str
    class_labels: tuple[str, ...]
    features: list[FeatureSpec]
    instances: pd.DataFrame
    ground_truth: np.ndarray
    row_ids: np.ndarray


def cache_relpath(url: str) -> Path:
    """Readable cache location for ``url``: host/path[__<query hash>].body"""
    parts = urlsplit(url)
    segments = [quote(s, safe="-_.") or "_" for s in parts.path.split("/") if s]
    segments = [s if s not in (".", "..") else s.replace(".", "%2E") for s in segments]
    name = segments.pop() if segments else "_root"
    if parts.query:
        name += "__" + hashlib.sha256(parts.query.encode()).hexdigest()[:16]
    return Path(quote(parts.netloc, safe="-_.") or "_", *segments, name + ".body")


class OpenMLClient:
    def __init__(self, config: Optional[ClientConfig] = None,
                 session: Optional[requests.Session] = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config or ClientConfig()
        self.session = session or requests.Session()
        self.sleep = sleep
        self._slots = threading.BoundedSemaphore(self.config.max_parallel)
        self._lock = threading.Lock()
        self.network_requests = 0
        self._in_flight = 0
        self.max_in_flight = 0

    # ------------------------------------------------------------ transport

    def url(self, path: str) -> str:
        return f"{self.config.base_url}/{path.lstrip('/')}"

    def cache_path(self, url: str) -> Path:
        return self.config.cache_dir / cache_relpath(url)

    def store(self, url: str, body: bytes) -> None:
        """Atomically write ``body`` as the cached response for ``url``."""
        path = self.cache_path(url)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(body)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def get(self, url: str) -> bytes:
        path = self.cache_path(url)
        if path.is_file():
            return path.read_bytes()
        if self.config.offline_mode:
            raise OfflineCacheMiss(f"offline mode and no cached response for {url}")
        body = self._download(url)
        self.store(url, body)
        return body

    def _download(self, url: str) -> bytes:
        params = {"api_key": self.config.api_key} if self.config.api_key else None
        last_error: Optional[Exception] = None
        for attempt in range(self.config.max_attempts):
            delay = self.config.backoff * 2 ** attempt
            with self._slots:
                with self._lock:
                    self.network_requests += 1
                    self._in_flight += 1
                    self.max_in_flight = max(self.max_in_flight, self._in_flight)
                try:
                    resp = self.session.get(url, params=params, timeout=self.config.timeout)
                except requests.RequestException as e:
                    resp, last_error = None, TransportError(f"{url}: {e}")
                finally:
                    with self._lock:
                        self._in_flight -= 1
            if resp is not None:
                if resp.status_code == 200:
                    return resp.content
                last_error = HTTPStatusError(url, resp.status_code, resp.text)
                if resp.status_code == 429:
                    retry_after = resp.headers.get("Retry-After", "")
                    if retry_after.isdigit():
                        delay = max(delay, float(retry_after))
                elif resp.status_code < 500:
                    raise last_error
            if attempt + 1 < self.config.max_attempts:
                log.debug("retrying %s in %.1fs (%s)", url, delay, last_error)
                self.sleep(delay)
        raise last_error

    def get_json(self, url: str) -> dict:
        body = self.get(url)
        try:
            return json.loads(body)
        except json.JSONDecodeError as e:
            raise OpenMLParseError(f"{url}: invalid JSON at byte offset {e.pos}") from None

    def map(self, fn, items) -> list:
        """Apply ``fn`` to ``items`` on at most ``max_parallel`` threads, keeping order."""
        items = list(items)
        if self.config.max_parallel == 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.config.max_parallel) as pool:
            return list(pool.map(fn, items))

    # ------------------------------------------------------------ endpoints

    def task_url(self, task_id: int) -> str:
        return self.url(f"json/task/{int(task_id)}")

    def dataset_url(self, dataset_id: int) -> str:
        return self.url(f"json/data/{int(dataset_id)}")

    def evaluations_url(self, task_id: int, metric: str, offset: int) -> str:
        return self.url(f"json/evaluation/list/function/{metric}/task/{int(task_id)}"
                        f"/sort_order/desc/limit/{self.config.page_size}/offset/{offset}")

    def run_url(self, run_id: int) -> str:
        return self.url(f"json/run/{int(run_id)}")

    def suite_url(self, suite_id) -> str:
        return self.url(f"json/study/{suite_id}")

    def fetch_task(self, task_id: int) -> TaskDescriptor:
        try:
            doc = self.get_json(self.task_url(task_id))
        except HTTPStatusError as e:
            if e.status in (404, 412):
                raise UnknownTaskError(f"unknown task {task_id}") from None
            raise
        try:
            task = doc["task"]
            inputs = {i["name"]: i for i in _as_list(task["input"])}
            source = inputs["source_data"]["data_set"]
            procedure = inputs["estimation_procedure"]["estimation_procedure"]
            params = {p["name"]: p.get("value") for p in _as_list(procedure.get("parameter", []))}
            task_type_id = int(task["task_type_id"])
            task_type = task.get("task_type", str(task_type_id))
        except (KeyError, TypeError, ValueError) as e:
            raise OpenMLParseError(f"task {task_id}: unexpected task document ({e!r})") from None
        if task_type_id != CLASSIFICATION_TASK_TYPE:
            raise UnsupportedTaskError(
                f"task {task_id} is {task_type!r}; only supervised classification is supported")
        n_repeats = int(params.get("number_repeats") or 1)
        if n_repeats > 1:
            raise UnsupportedTaskError(f"task {task_id} has {n_repeats} repeats; only 1 is supported")
        return TaskDescriptor(
            task_id=int(task["task_id"]),
            dataset_id=int(source["data_set_id"]),
            task_type=task_type,
            n_folds=int(params.get("number_folds") or 1),
            n_repeats=n_repeats,
            target_name=source["target_feature"],
            split_file_url=procedure["data_splits_url"],
            estimation_type=procedure.get("type", ""),
        )

    def fetch_dataset(self, dataset_id: int, target_name: Optional[str] = None) -> DatasetBundle:
        desc = self.get_json(self.dataset_url(dataset_id))["data_set_description"]
        target_name = target_name or desc.get("default_target_attribute")
        drop = set(_as_list(desc.get("ignore_attribute") or []))
        if desc.get("row_id_attribute"):
            drop.add(desc["row_id_attribute"])
        url = desc["url"]
        try:
            arff = parse_arff(self.get(url))
        except ArffParseError as e:
            raise OpenMLParseError(f"dataset {dataset_id} ({url}): {e}") from None
        return bundle_from_arff(arff, int(dataset_id), desc.get("name", arff.relation),
                                target_name, drop)

    def fetch_splits(self, task: TaskDescriptor, n_instances: int) -> np.ndarray:
        try:
            arff = parse_arff(self.get(task.split_file_url))
        except ArffParseError as e:
            raise OpenMLParseError(f"split file of task {task.task_id}: {e}") from None
        return folds_from_split_arff(arff, n_instances, task.n_folds)

    def _evaluations(self, task_id: int, metric: str, offset: int) -> list[dict]:
        url = self.evaluations_url(task_id, metric, offset)
        try:
            doc = self.get_json(url)
        except HTTPStatusError as e:
            if e.status == 412:  # OpenML's "no results" answer
                return []
            raise
        return _as_list(doc.get("evaluations", {}).get("evaluation", []))

    def ranked_runs(self, task_id: int, metric: str, at_least: int) -> list[RunSummary]:
        """Deduplicated runs, best first, complete at least down to rank ``at_least``.

        Sorted by metric value descending, ties by ascending run id.
        """
        raw: dict[int, RunSummary] = {}
        offset = 0
        while True:
            page = self._evaluations(task_id, metric, offset)
            offset += len(page)
            for e in page:
                value = e.get("value")
                try:
                    value = float(value)
                except (TypeError, ValueError):
                    continue
                if not math.isfinite(value):
                    continue
                run = RunSummary(int(e["run_id"]), int(e["flow_id"]), e.get("flow_name", ""),
                                 int(e["setup_id"]), value)
                raw[run.run_id] = run
            ranked = curation.dedup_runs(sorted(raw.values(), key=lambda r: (-r.metric_value, r.run_id)))
            if len(page) < self.config.page_size:
                return ranked
            values = [float(e["value"]) for e in page if _finite(e.get("value"))]
            if (values and len(ranked) >= at_least
                    and min(values) < ranked[at_least - 1].metric_value):
                return ranked

    def resolve_run(self, run: RunSummary) -> RunSummary:
        """Fill in the prediction file URL from the run description."""
        doc = self.get_json(self.run_url(run.run_id))
        files = _as_list(doc.get("run", {}).get("output_data", {}).get("file", []))
        url = next((f.get("url") for f in files if f.get("name") == "predictions"), None)
        return RunSummary(run.run_id, run.flow_id, run.flow_name, run.setup_id, run.metric_value, url)

    def fetch_top_runs(self, task_id: int, metric_name: str, n: int) -> list[RunSummary]:
        if n < 1:
            raise ValueError("n must be >= 1")
        top = self.ranked_runs(task_id, metric_name, n)[:n]
        return self.map(self.resolve_run, top)

    def fetch_predictions(self, run: RunSummary) -> bytes:
        if not run.prediction_file_url:
            raise MissingPredictionsError(f"run {run.run_id} has no prediction file")
        try:
            body = self.get(run.prediction_file_url)
        except HTTPStatusError as e:
            if e.status in (404, 412):
                raise MissingPredictionsError(f"run {run.run_id}: prediction file not found") from None
            raise
        if not body.strip():
            raise MissingPredictionsError(f"run {run.run_id}: empty prediction file")
        return body

    def fetch_suite(self, suite_id) -> list[int]:
        try:
            doc = self.get_json(self.suite_url(suite_id))
        except HTTPStatusError as e:
            if e.status in (404, 412):
                raise UnknownSuiteError(f"unknown suite {suite_id}") from None
            raise
        try:
            return [int(t) for t in _as_list(doc["study"]["tasks"]["task_id"])]
        except (KeyError, TypeError) as e:
            raise OpenMLParseError(f"suite {suite_id}: unexpected document ({e!r})") from None


def _finite(v) -> bool:
    try:
        return math.isfinite(float(v))
    except (TypeError, ValueError):
        return False


def _as_list(v) -> list:
    # OpenML's JSON collapses one-element lists into the element itself
    return v if isinstance(v, list) else [v]


def bundle_from_arff(arff, dataset_id: int, name: str, target_name: str,
                     drop=frozenset()) -> DatasetBundle:
    names = arff.names
    if target_name not in names:
        raise OpenMLParseError(f"dataset {dataset_id}: target {target_name!r} not among attributes")
    t = arff.index(target_name)
    target_attr = arff.attributes[t]
    if target_attr.type != "nominal":
        raise OpenMLParseError(f"dataset {dataset_id}: target {target_name!r} is not nominal")
    class_labels = target_attr.values
    n = len(arff.rows)
    ground_truth = np.empty(n, dtype=object)
    for i, row in enumerate(arff.rows):
        if row[t] is None:
            raise OpenMLParseError(f"dataset {dataset_id}: row {i} has a missing target")
        ground_truth[i] = row[t]
    features, columns = [], {}
    for j, attr in enumerate(arff.attributes):
        if j == t or attr.name in drop:
            continue
        raw = [row[j] for row in arff.rows]
        has_missing = any(v is None for v in raw)
        if attr.type == "numeric":
            spec = FeatureSpec(attr.name, "numeric", (), has_missing)
            columns[attr.name] = np.array([np.nan if v is None else v for v in raw], dtype=float)
        else:
            cats = attr.values if attr.type == "nominal" else tuple(sorted({v for v in raw if v is not None}))
            if not cats:
                cats = ("",)
            spec = FeatureSpec(attr.name, "categorical", tuple(cats), has_missing)
            columns[attr.name] = pd.Categorical(raw, categories=list(cats))
        features.append(spec)
    instances = pd.DataFrame(columns, columns=[f.name for f in features])
    return DatasetBundle(dataset_id, name, target_name, tuple(class_labels), features, instances,
                         ground_truth, np.arange(n))


def folds_from_split_arff(arff, n_instances: int, n_folds: int) -> np.ndarray:
    try:
        j_type, j_row = arff.index("type"), arff.index("rowid")
        j_rep, j_fold = arff.index("repeat"), arff.index("fold")
    except KeyError as e:
        raise OpenMLParseError(f"split file lacks column {e.args[0]!r}") from None
    folds = np.full(n_instances, -1, dtype=np.int64)
    for row in arff.rows:
        if row[j_type] != "TEST" or int(row[j_rep]) != 0:
            continue
        r, f = int(row[j_row]), int(row[j_fold])
        if not 0 <= r < n_instances:
            raise OpenMLParseError(f"split file: row id {r} outside dataset of {n_instances} rows")
        if folds[r] != -1:
            raise OpenMLParseError(f"split file: row {r} is a test instance in folds {folds[r]} and {f}")
        folds[r] = f
    missing = np.flatnonzero(folds == -1)
    if missing.size:
        raise OpenMLParseError(f"split file: rows {missing[:10].tolist()} are in no test fold")
    used = np.unique(folds)
    if len(used) != n_folds or used.min() != 0 or used.max() != n_folds - 1:
        raise OpenMLParseError(f"split file: test folds {used.tolist()} but task declares {n_folds}")
    return folds
