"""Deduplication of configurations and benchmark filters."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import metrics
from .model import BenchmarkSpec, Metatask, encode_labels, slice_metatask

log = logging.getLogger(__name__)

RANDOM_AUROC = 0.5


@dataclass(frozen=True)
class DedupKey:
    flow_id: int
    setup_id: int


def dedup_runs(runs: Iterable) -> list:
    """Keep the first run per (flow_id, setup_id); ``runs`` is best-first."""
    seen, out = set(), []
    for r in runs:
        key = DedupKey(int(r.flow_id), int(r.setup_id))
        if key not in seen:
            seen.add(key)
            out.append(r)
    return out


def base_model_auroc(m: Metatask) -> np.ndarray:
    """AUROC of every base model over all instances of the task."""
    y = encode_labels(m.ground_truth, m.class_labels)
    labels = range(len(m.class_labels))
    return np.array([metrics.auroc(y, bm.confidences, labels) for bm in m.base_models])


def filter_worse_than_random(m: Metatask) -> Metatask:
    """Drop base models with AUROC <= 0.5."""
    if not m.base_models:
        return m
    scores = base_model_auroc(m)
    kept = [bm for bm, s in zip(m.base_models, scores) if s > RANDOM_AUROC]
    if len(kept) < len(m.base_models):
        log.info("task %s: removed %d worse-than-random base models", m.task_id,
                 len(m.base_models) - len(kept))
    return m.with_base_models(kept)


def filter_corrupted(m: Metatask) -> Metatask:
    return m.with_base_models([bm for bm in m.base_models if not bm.corrupted])


def vba_sba_gap(m: Metatask, metric: str = metrics.AUROC) -> float:
    """metric(VBA) - metric(SBA) over all instances."""
    if not m.base_models:
        raise ValueError(f"task {m.task_id}: VBA-SBA gap of an empty roster")
    pm = slice_metatask(m, np.arange(m.n_instances))
    sba = metrics.sba_index(pm, metric)
    vba_pred, vba_conf = metrics.vba_rows(pm)
    C = pm.n_classes
    vba_score = metrics.score(metric, pm.ground_truth, vba_pred, vba_conf, C)
    sba_score = metrics.score(metric, pm.ground_truth, pm.predictions[:, sba],
                              pm.confidences[:, sba, :], C)
    return vba_score - sba_score


@dataclass(frozen=True)
class Rejection:
    task_id: int
    reason: str
    detail: str


def curate(metatasks: Sequence[Metatask], spec: BenchmarkSpec,
           metric: str = metrics.AUROC) -> tuple[list[Metatask], list[Rejection]]:
    """Apply base-model filters, then the roster-size and VBA-SBA gap checks."""
    kept, rejected = [], []
    for m in metatasks:
        if spec.drop_corrupted:
            m = filter_corrupted(m)
        if spec.drop_worse_than_random:
            m = filter_worse_than_random(m)
        n_models = len(m.base_models)
        if n_models < spec.min_base_models or n_models == 0:
            rejected.append(Rejection(m.task_id, "min_base_models",
                                      f"{n_models} base models < {spec.min_base_models}"))
            continue
        try:
            gap = vba_sba_gap(m, metric)
        except metrics.UndefinedMetricError as e:
            rejected.append(Rejection(m.task_id, "undefined_metric", str(e)))
            continue
        if gap < spec.gap_threshold:
            rejected.append(Rejection(m.task_id, "vba_sba_gap",
                                      f"gap {float(gap)!r} < {spec.gap_threshold!r}"))
            continue
        kept.append(m)
    for r in rejected:
        log.info("rejected task %s: %s (%s)", r.task_id, r.reason, r.detail)
    return kept, rejected


def rejections_csv(rejections: Sequence[Rejection]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task_id", "reason", "detail"])
    for r in rejections:
        w.writerow([r.task_id, r.reason, r.detail])
    return buf.getvalue()
