import json
import threading
import time

import numpy as np
import pytest
import requests

from metatasks.arff import parse_arff
from metatasks.openml_client import (ClientConfig, HTTPStatusError, MissingPredictionsError,
                                     OfflineCacheMiss, OpenMLClient, OpenMLParseError, RunSummary,
                                     TransportError, UnknownSuiteError, UnknownTaskError,
                                     UnsupportedTaskError, cache_relpath, folds_from_split_arff)
from metatasks.synthetic import SyntheticTask, synthetic_responses

BASE = "https://example.test/api/v1"


class FakeResponse:
    def __init__(self, status, body=b"", headers=None):
        self.status_code, self.content = status, body
        self.text = body.decode(errors="replace")
        self.headers = headers or {}


class FakeSession:
    """Serves ``routes`` (url -> bytes, FakeResponse or list of them, consumed in order)."""

    def __init__(self, routes=None, delay=0.0):
        self.routes = dict(routes or {})
        self.calls = []
        self.delay = delay
        self._lock = threading.Lock()
        self._active = 0
        self.max_active = 0

    def get(self, url, params=None, timeout=None):
        with self._lock:
            self.calls.append((url, params))
            self._active += 1
            self.max_active = max(self.max_active, self._active)
        try:
            if self.delay:
                time.sleep(self.delay)
            route = self.routes.get(url)
            if isinstance(route, list):
                route = route.pop(0) if len(route) > 1 else route[0]
            if isinstance(route, Exception):
                raise route
            if route is None:
                return FakeResponse(404, b"not found")
            return route if isinstance(route, FakeResponse) else FakeResponse(200, route)
        finally:
            with self._lock:
                self._active -= 1


def make_client(tmp_path, routes=None, sleeps=None, **config):
    session = FakeSession(routes)
    cfg = ClientConfig(base_url=BASE, cache_dir=tmp_path / "cache", **config)
    sleeps = [] if sleeps is None else sleeps
    return OpenMLClient(cfg, session=session, sleep=sleeps.append), session


def evaluation(run_id, value, flow=1, setup=1, task=1):
    return {"run_id": str(run_id), "task_id": str(task), "flow_id": str(flow),
            "setup_id": str(setup), "flow_name": f"f{flow}", "value": str(value)}


def eval_pages(client, task, evaluations, page_size):
    routes = {}
    for offset in range(0, len(evaluations), page_size):
        routes[client.evaluations_url(task, "area_under_roc_curve", offset)] = json.dumps(
            {"evaluations": {"evaluation": evaluations[offset:offset + page_size]}}).encode()
    return routes


# --------------------------------------------------------------- transport


def test_retries_server_errors_with_backoff(tmp_path):
    url = f"{BASE}/json/x"
    sleeps = []
    client, session = make_client(tmp_path, {url: [FakeResponse(503), FakeResponse(502), b"ok"]},
                                  sleeps=sleeps)
    assert client.get(url) == b"ok"
    assert client.network_requests == 3 and sleeps == [1.0, 2.0]


def test_gives_up_after_max_attempts(tmp_path):
    url = f"{BASE}/json/x"
    client, _ = make_client(tmp_path, {url: [FakeResponse(500)]})
    with pytest.raises(HTTPStatusError) as e:
        client.get(url)
    assert e.value.status == 500 and client.network_requests == 3
    assert not client.cache_path(url).exists()


def test_connection_errors_become_transport_errors(tmp_path):
    url = f"{BASE}/json/x"
    client, _ = make_client(tmp_path, {url: [requests.ConnectionError("refused")]})
    with pytest.raises(TransportError, match="refused"):
        client.get(url)


def test_retry_after_is_honoured(tmp_path):
    url = f"{BASE}/json/x"
    sleeps = []
    client, _ = make_client(tmp_path, {url: [FakeResponse(429, headers={"Retry-After": "7"}), b"ok"]},
                            sleeps=sleeps)
    assert client.get(url) == b"ok" and sleeps == [7.0]


def test_client_errors_are_not_retried(tmp_path):
    client, _ = make_client(tmp_path)
    with pytest.raises(UnknownTaskError):
        client.fetch_task(424242)
    assert client.network_requests == 1


def test_parallel_requests_are_bounded(tmp_path):
    urls = [f"{BASE}/json/item/{i}" for i in range(12)]
    client, session = make_client(tmp_path, {u: b"x" for u in urls}, max_parallel=3)
    session.delay = 0.02
    assert client.map(client.get, urls) == [b"x"] * 12
    assert 1 < session.max_active <= 3 and client.max_in_flight <= 3


def test_cache_then_offline_replay(tmp_path):
    url = f"{BASE}/json/x"
    client, session = make_client(tmp_path, {url: b"body"}, api_key="secret")
    assert client.get(url) == b"body" and client.get(url) == b"body"
    assert session.calls == [(url, {"api_key": "secret"})]
    assert "secret" not in str(client.cache_path(url))
    offline, offline_session = make_client(tmp_path, offline_mode=True)
    assert offline.get(url) == b"body"
    with pytest.raises(OfflineCacheMiss):
        offline.get(f"{BASE}/json/other")
    assert offline_session.calls == [] and offline.network_requests == 0


def test_cache_paths_stay_inside_the_cache():
    assert cache_relpath("https://h/api/v1/json/task/3").as_posix() == "h/api/v1/json/task/3.body"
    p = cache_relpath("https://h/a/../../etc/passwd?x=1")
    assert ".." not in p.parts and p.name.startswith("passwd__")
    assert cache_relpath("https://h/a?x=1") != cache_relpath("https://h/a?x=2")


def test_invalid_json_reports_offset(tmp_path):
    url = f"{BASE}/json/x"
    client, _ = make_client(tmp_path, {url: b'{"a": }'})
    with pytest.raises(OpenMLParseError, match="byte offset 6"):
        client.get_json(url)


# --------------------------------------------------------------- endpoints


def synthetic_task_doc(client, task_type_id="1", repeats="1"):
    t = SyntheticTask(task_id=5, dataset_id=6, name="toy", n_instances=30, class_labels=("a", "b"),
                      n_folds=3, run_kinds=("normal",), seed=1, first_run_id=10)
    routes = synthetic_responses([t], BASE)
    doc = json.loads(routes[client.task_url(5)])
    doc["task"]["task_type_id"] = task_type_id
    params = doc["task"]["input"][1]["estimation_procedure"]["parameter"]
    params[0]["value"] = repeats
    routes[client.task_url(5)] = json.dumps(doc).encode()
    return routes


def test_fetch_task_and_dataset(tmp_path):
    client, session = make_client(tmp_path)
    session.routes = synthetic_task_doc(client)
    task = client.fetch_task(5)
    assert (task.task_id, task.dataset_id, task.n_folds, task.target_name) == (5, 6, 3, "class")
    data = client.fetch_dataset(task.dataset_id, task.target_name)
    assert data.class_labels == ("a", "b") and len(data.ground_truth) == 30
    folds = client.fetch_splits(task, 30)
    assert sorted(np.unique(folds).tolist()) == [0, 1, 2]


@pytest.mark.parametrize("task_type, repeats, match", [("2", "1", "only supervised classification"),
                                                       ("1", "2", "2 repeats")])
def test_unsupported_tasks(tmp_path, task_type, repeats, match):
    client, session = make_client(tmp_path)
    session.routes = synthetic_task_doc(client, task_type, repeats)
    with pytest.raises(UnsupportedTaskError, match=match):
        client.fetch_task(5)


def test_dedup_happens_before_truncation(tmp_path):
    # 100 runs over 3 configurations; the 2nd and 3rd appear only at ranks 51 and 100
    evals = [evaluation(i, 0.99 - i * 1e-3, setup=0 if i < 50 else (1 if i < 99 else 2))
             for i in range(100)]
    client, session = make_client(tmp_path, page_size=10)
    session.routes = eval_pages(client, 1, evals, 10)
    session.routes[client.evaluations_url(1, "area_under_roc_curve", 100)] = FakeResponse(412)
    for i in (0, 50, 99):
        session.routes[client.run_url(i)] = json.dumps({"run": {"output_data": {"file": [
            {"name": "predictions", "url": f"{BASE}/p/{i}"}]}}}).encode()
    top = client.fetch_top_runs(1, "area_under_roc_curve", 3)
    assert [r.run_id for r in top] == [0, 50, 99]
    assert top[1].prediction_file_url == f"{BASE}/p/50"


def test_paging_stops_once_top_n_is_settled(tmp_path):
    evals = [evaluation(i, 0.99 - i * 1e-3, setup=i) for i in range(30)]
    client, session = make_client(tmp_path, page_size=10)
    session.routes = eval_pages(client, 1, evals, 10)
    ranked = client.ranked_runs(1, "area_under_roc_curve", 5)
    assert [r.run_id for r in ranked] == list(range(10))
    assert client.network_requests == 1


def test_ties_ordered_by_run_id(tmp_path):
    evals = [evaluation(7, 0.9, setup=1), evaluation(3, 0.9, setup=2), evaluation(5, 0.9, setup=3),
             evaluation(9, 0.95, setup=4), evaluation(4, "NaN", setup=5)]
    client, session = make_client(tmp_path)
    session.routes = eval_pages(client, 1, evals, 1000)
    assert [r.run_id for r in client.ranked_runs(1, "area_under_roc_curve", 3)] == [9, 3, 5, 7]


def test_no_evaluations(tmp_path):
    client, session = make_client(tmp_path)
    session.routes = {client.evaluations_url(1, "area_under_roc_curve", 0): FakeResponse(412)}
    assert client.ranked_runs(1, "area_under_roc_curve", 3) == []


def test_missing_predictions(tmp_path):
    client, session = make_client(tmp_path)
    with pytest.raises(MissingPredictionsError, match="no prediction file"):
        client.fetch_predictions(RunSummary(1, 1, "f", 1, 0.9))
    with pytest.raises(MissingPredictionsError, match="not found"):
        client.fetch_predictions(RunSummary(1, 1, "f", 1, 0.9, f"{BASE}/gone"))
    session.routes[f"{BASE}/empty"] = b"  \n"
    with pytest.raises(MissingPredictionsError, match="empty"):
        client.fetch_predictions(RunSummary(1, 1, "f", 1, 0.9, f"{BASE}/empty"))
    session.routes[client.run_url(2)] = json.dumps({"run": {"output_data": {"file": {
        "name": "description", "url": "x"}}}}).encode()
    assert client.resolve_run(RunSummary(2, 1, "f", 1, 0.9)).prediction_file_url is None


def test_fetch_suite(tmp_path):
    client, session = make_client(tmp_path)
    session.routes[client.suite_url(271)] = json.dumps(
        {"study": {"tasks": {"task_id": ["3", "31"]}}}).encode()
    session.routes[client.suite_url(1)] = json.dumps({"study": {"tasks": {"task_id": "8"}}}).encode()
    assert client.fetch_suite(271) == [3, 31]
    assert client.fetch_suite(1) == [8]
    with pytest.raises(UnknownSuiteError):
        client.fetch_suite(2)


SPLITS = b"""@relation s
@attribute type {TRAIN,TEST}
@attribute rowid numeric
@attribute repeat numeric
@attribute fold numeric
@data
TEST,0,0,0
TRAIN,1,0,0
TEST,1,0,1
TRAIN,0,0,1
TEST,0,1,1
"""


def test_split_file_parsing():
    np.testing.assert_array_equal(folds_from_split_arff(parse_arff(SPLITS), 2, 2), [0, 1])
    with pytest.raises(OpenMLParseError, match="no test fold"):
        folds_from_split_arff(parse_arff(SPLITS), 3, 2)
    with pytest.raises(OpenMLParseError, match="declares 3"):
        folds_from_split_arff(parse_arff(SPLITS), 2, 3)
    doubled = SPLITS + b"TEST,0,0,1\n"
    with pytest.raises(OpenMLParseError, match="folds 0 and 1"):
        folds_from_split_arff(parse_arff(doubled), 2, 2)
