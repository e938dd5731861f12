"""Assemble a metatask from OpenML: task, dataset, folds and top-n run predictions."""
from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

import numpy as np

from . import __version__
from .model import BaseModelRun, BuildInfo, Metatask, encode_labels
from .openml_client import OpenMLClient, OpenMLError, RunSummary
from .predictions import PredictionFormatError, RepairPolicy, parse_prediction_file, repair

log = logging.getLogger(__name__)


@dataclass
class BuildReport:
    task_id: int
    skipped_runs: list = field(default_factory=list)  # (run_id, reason)


def build_timestamp() -> str:
    """UTC now, or ``SOURCE_DATE_EPOCH`` when set (reproducible builds)."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (datetime.fromtimestamp(int(epoch), tz=timezone.utc) if epoch
            else datetime.now(timezone.utc).replace(microsecond=0))
    return when.strftime("%Y-%m-%dT%H:%M:%SZ")


def _load_run(client: OpenMLClient, run: RunSummary, class_labels, y_codes, folds,
              policy: RepairPolicy):
    """Fetch, parse, check and repair one run; returns (BaseModelRun, sha256) or a reason string."""
    try:
        run = client.resolve_run(run) if not run.prediction_file_url else run
        body = client.fetch_predictions(run)
        parsed = parse_prediction_file(body, class_labels)
    except (OpenMLError, PredictionFormatError) as e:
        return f"{type(e).__name__}: {e}"
    n = len(y_codes)
    if len(parsed) != n or not np.array_equal(parsed.row_ids, np.arange(n)):
        return f"prediction rows cover {len(parsed)} row ids, task has {n} instances"
    if not np.array_equal(parsed.folds, folds):
        return "prediction file folds disagree with the task's split"
    repaired, classes, corrupted = repair(parsed, policy, y_codes)
    bm = BaseModelRun(
        run_id=run.run_id, flow_name=run.flow_name, flow_id=run.flow_id, setup_id=run.setup_id,
        metric_score=run.metric_value, predictions=repaired.predicted_labels,
        confidences=repaired.confidences, discrepancy=classes, corrupted=corrupted)
    return bm, hashlib.sha256(body).hexdigest()


def build_metatask(client: OpenMLClient, task_id: int, metric: str = "area_under_roc_curve",
                   top_n: int = 50, policy: RepairPolicy = RepairPolicy(),
                   source_suite: Optional[int] = None) -> tuple[Metatask, BuildReport]:
    """Fetch everything for ``task_id`` and keep the ``top_n`` usable runs.

    Runs whose predictions are missing or unparsable are skipped and the list
    is backfilled from the next-ranked runs.
    """
    report = BuildReport(task_id)
    task = client.fetch_task(task_id)
    data = client.fetch_dataset(task.dataset_id, task.target_name)
    n = len(data.ground_truth)
    folds = client.fetch_splits(task, n)
    y_codes = encode_labels(data.ground_truth, data.class_labels)

    usable: list[BaseModelRun] = []
    hashes: dict[int, str] = {}
    considered = 0
    while len(usable) < top_n:
        ranked = client.ranked_runs(task_id, metric, top_n + len(report.skipped_runs))
        batch = ranked[considered:considered + top_n - len(usable)]
        if not batch:
            break
        considered += len(batch)
        results = client.map(
            lambda r: _load_run(client, r, data.class_labels, y_codes, folds, policy), batch)
        for run, res in zip(batch, results):
            if isinstance(res, str):
                log.warning("task %s: skipping run %s (%s)", task_id, run.run_id, res)
                report.skipped_runs.append((run.run_id, res))
            else:
                usable.append(res[0])
                hashes[run.run_id] = res[1]
    if len(usable) < top_n:
        log.info("task %s: %d usable runs (fewer than top_n=%d exist)", task_id, len(usable), top_n)

    m = Metatask(
        task_id=task.task_id, dataset_name=data.name, class_labels=data.class_labels,
        target_name=data.target_name, feature_schema=tuple(data.features),
        instances=data.instances, ground_truth=data.ground_truth, fold_of_instance=folds,
        n_folds=task.n_folds, base_models=tuple(usable),
        build_info=BuildInfo(tool_version=__version__, fetch_timestamp=build_timestamp(),
                             ranking_metric=metric, top_n=top_n, source_suite=source_suite,
                             prediction_hashes=hashes))
    return m, report
