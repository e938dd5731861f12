"""Fold-wise simulation protocol and closed-gap reporting."""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import ensembles, metrics
from .ensembles import ALL_TECHNIQUES, TechniqueConfig, TechniqueId
from .learners import preprocess
from .model import BenchmarkSpec, Metatask, slice_metatask

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("task_id", "dataset_name", "fold", "technique", "metric", "score", "valid",
                  "reason", "seed", "meta_train_size", "meta_test_size")
REPORT_COLUMNS = (TechniqueId.SBA, TechniqueId.DCS, TechniqueId.DES, TechniqueId.STACKING,
                  TechniqueId.VOTING, TechniqueId.ENSEMBLE_SELECTION, TechniqueId.VBE, TechniqueId.VBA)
REPORT_HEADERS = {
    TechniqueId.SBA: "SBA", TechniqueId.DCS: "DCS", TechniqueId.DES: "DES",
    TechniqueId.STACKING: "Stacking", TechniqueId.VOTING: "Voting",
    TechniqueId.ENSEMBLE_SELECTION: "ES", TechniqueId.VBE: "VBE", TechniqueId.VBA: "VBA",
}


def stratified_half_split(indices, labels, ratio: float = 0.5, seed: int = 0):
    """Split ``indices`` into (meta_train, meta_test), stratified by ``labels``.

    Each class contributes ``floor(ratio * count)`` instances to meta-train;
    the remaining meta-train slots (up to ``round(ratio * n)``) go to classes
    with the largest fractional remainder, ties broken by a seeded shuffle.
    Both halves are returned sorted.
    """
    indices = np.asarray(indices)
    labels = np.asarray(labels)
    if len(indices) != len(labels):
        raise ValueError("indices and labels differ in length")
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    n = len(indices)
    if n < 2:
        raise ValueError(f"cannot split {n} instance(s) into two non-empty halves")
    rng = np.random.default_rng(seed)
    classes, inverse = np.unique(labels, return_inverse=True)
    counts = np.bincount(inverse, minlength=len(classes))
    target = min(max(int(math.floor(ratio * n + 0.5)), 1), n - 1)
    take = np.floor(ratio * counts).astype(np.int64)
    remainder = ratio * counts - take
    extra = target - int(take.sum())
    if extra > 0:
        tiebreak = rng.permutation(len(classes))
        order = np.lexsort((tiebreak, -remainder))
        eligible = [c for c in order if take[c] < counts[c]]
        for c in eligible[:extra]:
            take[c] += 1
    train = []
    for c in range(len(classes)):
        members = np.flatnonzero(inverse == c)
        members = members[rng.permutation(len(members))]
        train.append(members[:take[c]])
    train_pos = np.sort(np.concatenate(train))
    test_mask = np.ones(n, dtype=bool)
    test_mask[train_pos] = False
    return indices[train_pos], indices[np.flatnonzero(test_mask)]


def derive_seed(seed: int, task_id: int, fold: int) -> int:
    digest = hashlib.sha256(f"{seed}:{task_id}:{fold}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass
class FoldRun:
    task_id: int
    dataset_name: str
    fold: int
    technique: TechniqueId
    score: float
    valid: bool
    reason: str
    seed: int
    meta_train_size: int
    meta_test_size: int
    metric: str = metrics.AUROC

    def as_row(self) -> list[str]:
        return [str(self.task_id), self.dataset_name, str(self.fold), self.technique.value,
                self.metric, repr(float(self.score)) if self.valid else "",
                "true" if self.valid else "false", self.reason, str(self.seed),
                str(self.meta_train_size), str(self.meta_test_size)]


@dataclass
class FoldContext:
    """Everything techniques of one (task, fold) share: the split and the EPMs."""

    seed: int
    pm_train: object
    pm_test: object
    x_train: np.ndarray
    x_test: np.ndarray
    epms: Optional[list] = None


def prepare_fold(m: Metatask, fold: int, spec: BenchmarkSpec, features=None) -> FoldContext:
    test_idx = m.fold_indices(fold)
    seed = derive_seed(spec.seed, m.task_id, fold)
    y = m.ground_truth[test_idx]
    train, test = stratified_half_split(test_idx, y, spec.split_ratio, seed)
    if features is None:
        features = preprocess(m.instances, m.feature_schema)
    return FoldContext(
        seed=seed,
        pm_train=slice_metatask(m, train, drop_corrupted=spec.drop_corrupted),
        pm_test=slice_metatask(m, test, drop_corrupted=spec.drop_corrupted),
        x_train=features.rows(train),
        x_test=features.rows(test),
    )


def run_fold(m: Metatask, fold: int, technique, spec: BenchmarkSpec,
             config: TechniqueConfig = TechniqueConfig(), features=None,
             context: Optional[FoldContext] = None) -> FoldRun:
    """Fit ``technique`` on meta-train, score AUROC on meta-test."""
    t = TechniqueId.parse(technique) if isinstance(technique, str) else TechniqueId(technique)
    if not 0 <= fold < m.n_folds:
        raise IndexError(f"fold {fold} out of range [0, {m.n_folds})")
    ctx = context or prepare_fold(m, fold, spec, features)
    pm_train, pm_test = ctx.pm_train, ctx.pm_test

    def result(score=math.nan, valid=True, reason=""):
        return FoldRun(m.task_id, m.dataset_name, fold, t, score, valid, reason, ctx.seed,
                       pm_train.n_instances, pm_test.n_instances)

    try:
        epms = ctx.epms if t in (TechniqueId.DCS, TechniqueId.DES) else None
        fitted = ensembles.fit(t, pm_train, ctx.x_train, config, ctx.seed, epms=epms)
        if t in (TechniqueId.DCS, TechniqueId.DES):
            ctx.epms = fitted.state
        _, conf = ensembles.predict(fitted, pm_test, ctx.x_test, config, ctx.seed)
        return result(metrics.auroc(pm_test.ground_truth, conf, range(pm_test.n_classes)))
    except metrics.UndefinedMetricError as e:
        return result(valid=False, reason=f"undefined metric: {e}")


def _run_task(args) -> list[FoldRun]:
    m, techniques, spec, config, folds = args
    features = preprocess(m.instances, m.feature_schema)
    out = []
    for fold in folds:
        try:
            ctx = prepare_fold(m, fold, spec, features)
        except ValueError as e:
            seed = derive_seed(spec.seed, m.task_id, fold)
            size = len(m.fold_indices(fold))
            out.extend(FoldRun(m.task_id, m.dataset_name, fold, t, math.nan, False,
                               f"split failed: {e}", seed, 0, size) for t in techniques)
            continue
        for t in techniques:
            try:
                out.append(run_fold(m, fold, t, spec, config, context=ctx))
            except Exception as e:  # recorded, never aborts the benchmark
                log.warning("task %s fold %s %s failed: %s", m.task_id, fold, t.value, e)
                out.append(FoldRun(m.task_id, m.dataset_name, fold, t, math.nan, False,
                                   f"error: {type(e).__name__}: {e}", ctx.seed,
                                   ctx.pm_train.n_instances, ctx.pm_test.n_instances))
    return out


def run_benchmark(metatasks: Sequence[Metatask], techniques, spec: BenchmarkSpec,
                  config: TechniqueConfig = TechniqueConfig(), workers: int = 1) -> list[FoldRun]:
    """All (metatask, fold, technique) runs, sorted by task, fold and technique."""
    techniques = [TechniqueId.parse(t) if isinstance(t, str) else TechniqueId(t) for t in techniques]
    if not techniques:
        return []
    jobs = [(m, techniques, spec, config, range(m.n_folds)) for m in metatasks]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_task, jobs))
    else:
        chunks = [_run_task(job) for job in jobs]
    order = {t: i for i, t in enumerate(ALL_TECHNIQUES)}
    runs = [r for chunk in chunks for r in chunk]
    runs.sort(key=lambda r: (r.task_id, r.fold, order[r.technique]))
    return runs


# ---------------------------------------------------------------- results CSV

def write_results_csv(runs: Iterable[FoldRun], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in runs:
        w.writerow(r.as_row())


def results_to_csv_text(runs: Iterable[FoldRun]) -> str:
    buf = io.StringIO()
    write_results_csv(runs, buf)
    return buf.getvalue()


class ResultsFormatError(ValueError):
    pass


def read_results_csv(fh) -> list[FoldRun]:
    reader = csv.DictReader(fh)
    missing = [c for c in RESULT_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise ResultsFormatError(f"results file lacks columns {missing}")
    runs = []
    for line, row in enumerate(reader, start=2):
        try:
            valid = row["valid"].strip().lower() == "true"
            runs.append(FoldRun(
                task_id=int(row["task_id"]), dataset_name=row["dataset_name"], fold=int(row["fold"]),
                technique=TechniqueId.parse(row["technique"]),
                score=float(row["score"]) if valid else math.nan, valid=valid,
                reason=row["reason"], seed=int(row["seed"]),
                meta_train_size=int(row["meta_train_size"]),
                meta_test_size=int(row["meta_test_size"]), metric=row["metric"]))
        except (TypeError, ValueError) as e:
            raise ResultsFormatError(f"line {line}: {e}") from None
    return runs


# ---------------------------------------------------------------- aggregation

@dataclass
class TaskSummary:
    task_id: int
    dataset_name: str
    n_instances: int
    means: dict  # technique -> mean score over valid folds
    stds: dict
    n_valid: dict
    n_invalid: dict
    closed_gaps: dict = field(default_factory=dict)


@dataclass
class BenchmarkReport:
    tasks: list  # TaskSummary per included task
    strata: dict  # stratum name -> {technique: (mean, std, n_tasks)}
    excluded: dict  # task_id -> reason
    min_instances: int
    techniques: list

    def table_rows(self):
        for name, row in self.strata.items():
            yield name, [row.get(t) for t in self.techniques]


def _mean_std(values) -> tuple[float, float]:
    a = np.asarray(values, dtype=float)
    return float(a.mean()), float(a.std())


def aggregate(runs: Sequence[FoldRun], sba_runs: Optional[Sequence[FoldRun]] = None,
              vba_runs: Optional[Sequence[FoldRun]] = None, min_instances: int = 1900,
              techniques: Optional[Sequence[TechniqueId]] = None) -> BenchmarkReport:
    """Closed-gap report.

    Per task, fold scores are averaged per technique; each mean is normalized
    with the task's mean SBA (dcs-sba) and VBA (dcs-vba) scores; normalized
    values are averaged over all tasks and over tasks with at least
    ``min_instances`` instances. Standard deviations use ``ddof=0``.
    """
    runs = list(runs)
    if sba_runs is None:
        sba_runs = [r for r in runs if r.technique is TechniqueId.SBA]
    if vba_runs is None:
        vba_runs = [r for r in runs if r.technique is TechniqueId.VBA]
    anchors = (TechniqueId.SBA, TechniqueId.VBA)
    everything = [r for r in runs if r.technique not in anchors] + list(sba_runs) + list(vba_runs)
    present = {r.technique for r in everything}
    if techniques is None:
        techniques = [t for t in REPORT_COLUMNS if t in present]
        techniques += [t for t in ALL_TECHNIQUES if t in present and t not in techniques]

    by_task: dict[int, list[FoldRun]] = {}
    for r in everything:
        by_task.setdefault(r.task_id, []).append(r)

    summaries, excluded = [], {}
    for task_id in sorted(by_task):
        task_runs = by_task[task_id]
        sizes = {}
        for r in task_runs:
            sizes.setdefault(r.fold, r.meta_train_size + r.meta_test_size)
        summary = TaskSummary(task_id, task_runs[0].dataset_name, int(sum(sizes.values())),
                              {}, {}, {}, {})
        for t in set(r.technique for r in task_runs):
            scores = [r.score for r in task_runs if r.technique is t and r.valid]
            summary.n_valid[t] = len(scores)
            summary.n_invalid[t] = sum(1 for r in task_runs if r.technique is t and not r.valid)
            if scores:
                summary.means[t], summary.stds[t] = _mean_std(scores)
        sba = summary.means.get(TechniqueId.SBA)
        vba = summary.means.get(TechniqueId.VBA)
        if sba is None or vba is None:
            excluded[task_id] = "missing SBA or VBA scores"
            log.warning("task %s excluded from report: missing SBA/VBA scores", task_id)
            continue
        if vba == sba:
            excluded[task_id] = "VBA equals SBA; closed gap undefined"
            log.warning("task %s excluded from report: VBA equals SBA", task_id)
            continue
        for t, mean in summary.means.items():
            summary.closed_gaps[t] = metrics.closed_gap(mean, sba, vba)
        summaries.append(summary)

    strata = {}
    for name, members in (("All Datasets", summaries),
                          (f"Datasets n >= {min_instances}",
                           [s for s in summaries if s.n_instances >= min_instances])):
        row = {}
        for t in techniques:
            gaps = [s.closed_gaps[t] for s in members if t in s.closed_gaps]
            if gaps:
                mean, std = _mean_std(gaps)
                row[t] = (mean, std, len(gaps))
        strata[name] = row
    return BenchmarkReport(summaries, strata, excluded, min_instances, list(techniques))


def _fmt_cell(cell) -> str:
    if cell is None:
        return "-"
    mean, std, _ = cell
    return f"{round(mean, 3) + 0.0} (±{round(std, 2) + 0.0})"


def report_markdown(report: BenchmarkReport) -> str:
    headers = ["Data"] + [REPORT_HEADERS.get(t, t.value) for t in report.techniques]
    lines = ["| " + " | ".join(headers) + " |",
             "|" + "|".join("---" for _ in headers) + "|"]
    for name, cells in report.table_rows():
        lines.append("| " + " | ".join([name] + [_fmt_cell(c) for c in cells]) + " |")
    if report.excluded:
        lines.append("")
        for task_id, reason in sorted(report.excluded.items()):
            lines.append(f"Excluded task {task_id}: {reason}")
    return "\n".join(lines) + "\n"


def report_csv(report: BenchmarkReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stratum", "technique", "closed_gap_mean", "closed_gap_std", "n_tasks"])
    for name, cells in report.table_rows():
        for t, cell in zip(report.techniques, cells):
            if cell is not None:
                w.writerow([name, t.value, repr(cell[0]), repr(cell[1]), cell[2]])
    return buf.getvalue()


def fold_score_table(runs: Sequence[FoldRun]) -> dict:
    """task_id -> technique -> list of (fold, score) over valid folds."""
    table: dict = {}
    for r in runs:
        if r.valid:
            table.setdefault(r.task_id, {}).setdefault(r.technique, []).append((r.fold, r.score))
    return table
