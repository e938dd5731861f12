"""Parsing and repair of OpenML run prediction files.

OpenML serves prediction files in several layouts. Recognized column names:

* prediction: ``prediction`` or ``pred``
* confidences: ``confidence.<label>`` or ``confidence_<label>``
* row id: ``row_id`` (with optional ``repeat`` and ``fold``)

Anything else fails loudly with the detected column list.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .arff import ArffParseError, parse_arff
from .model import DiscrepancyClass

log = logging.getLogger(__name__)

PREDICTION_COLUMNS = ("prediction", "pred")
CONFIDENCE_PREFIXES = ("confidence.", "confidence_")
IGNORED_COLUMNS = ("correct", "sample", "truth")


class PredictionFormatError(ValueError):
    pass


class UnsupportedFormatError(PredictionFormatError):
    pass


@dataclass(frozen=True)
class PredictionRow:
    row_id: int
    fold: int
    predicted_label: str
    confidence: dict


@dataclass
class ParsedPredictions:
    """Prediction rows of one run, sorted by ``row_id``.

    ``predicted`` holds codes into ``class_labels``; ``confidences`` is
    ``(n_rows, n_classes)``.
    """

    class_labels: tuple[str, ...]
    row_ids: np.ndarray
    folds: np.ndarray
    predicted: np.ndarray
    confidences: np.ndarray

    def __len__(self):
        return len(self.row_ids)

    def rows(self) -> Iterator[PredictionRow]:
        for i in range(len(self)):
            yield self.row(i)

    def row(self, i: int) -> PredictionRow:
        return PredictionRow(
            row_id=int(self.row_ids[i]), fold=int(self.folds[i]),
            predicted_label=self.class_labels[self.predicted[i]],
            confidence=dict(zip(self.class_labels, self.confidences[i].tolist())))

    @property
    def predicted_labels(self) -> np.ndarray:
        return np.asarray(self.class_labels, dtype=object)[self.predicted]

    def copy(self) -> "ParsedPredictions":
        return ParsedPredictions(self.class_labels, self.row_ids.copy(), self.folds.copy(),
                                 self.predicted.copy(), self.confidences.copy())


def _read_table(data: bytes) -> tuple[list[str], list[list]]:
    head = data.lstrip()[:512].lower()
    if head.startswith(b"@relation") or head.startswith(b"%") or b"@attribute" in head:
        try:
            arff = parse_arff(data)
        except ArffParseError as e:
            raise PredictionFormatError(f"malformed ARFF prediction file: {e}") from None
        return arff.names, arff.rows
    try:
        text = data.decode("utf-8-sig")
    except UnicodeDecodeError as e:
        raise PredictionFormatError(f"prediction file is not UTF-8 (byte offset {e.start})") from None
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise PredictionFormatError("empty prediction file") from None
    rows = []
    for r in reader:
        if not r:
            continue
        rows.append([None if v.strip() in ("", "?") else v.strip() for v in r])
    return header, rows


def _locate_columns(header: Sequence[str], class_labels: Sequence[str]):
    def fail(reason):
        raise UnsupportedFormatError(f"{reason}; detected columns: {list(header)}")

    lookup = {name: j for j, name in enumerate(header)}
    if len(lookup) != len(header):
        fail("duplicate column names")
    if "row_id" not in lookup:
        fail("no row_id column")
    pred = [lookup[c] for c in PREDICTION_COLUMNS if c in lookup]
    if len(pred) != 1:
        fail("expected exactly one prediction column ('prediction' or 'pred')")
    conf_cols = {}
    for j, name in enumerate(header):
        prefix = next((p for p in CONFIDENCE_PREFIXES if name.startswith(p)), None)
        if prefix is None:
            continue
        label = name[len(prefix):]
        if label not in class_labels:
            fail(f"confidence column {name!r} for label {label!r} not in class labels")
        if label in conf_cols:
            fail(f"two confidence columns for label {label!r}")
        conf_cols[label] = j
    missing = [c for c in class_labels if c not in conf_cols]
    if missing:
        fail(f"no confidence column for labels {missing}")
    known = {"row_id", "repeat", "fold", *PREDICTION_COLUMNS, *IGNORED_COLUMNS}
    unknown = [h for h in header if h not in known and h not in {header[j] for j in conf_cols.values()}]
    if unknown:
        fail(f"unrecognized columns {unknown}")
    return (lookup["row_id"], lookup.get("repeat"), lookup.get("fold"), pred[0],
            [conf_cols[c] for c in class_labels])


def _as_int(v, what: str, line: int) -> int:
    try:
        f = float(v)
    except (TypeError, ValueError):
        raise PredictionFormatError(f"row {line}: bad {what} value {v!r}") from None
    if not f.is_integer():
        raise PredictionFormatError(f"row {line}: non-integer {what} {v!r}")
    return int(f)


def parse_prediction_file(data: bytes, class_labels: Sequence[str]) -> ParsedPredictions:
    """Parse an ARFF or CSV prediction file into rows sorted by ``row_id``.

    Only the first repeat is kept; rows of all folds are concatenated.
    """
    class_labels = tuple(class_labels)
    header, rows = _read_table(data)
    j_row, j_rep, j_fold, j_pred, j_conf = _locate_columns(header, class_labels)
    lookup = {c: i for i, c in enumerate(class_labels)}
    C = len(class_labels)
    row_ids, folds, preds, confs = [], [], [], []
    for line, r in enumerate(rows, start=1):
        if len(r) != len(header):
            raise PredictionFormatError(f"row {line}: {len(r)} values for {len(header)} columns")
        if j_rep is not None and _as_int(r[j_rep], "repeat", line) != 0:
            continue
        label = r[j_pred]
        if label not in lookup:
            raise PredictionFormatError(f"row {line}: predicted label {label!r} not in class labels")
        conf = np.empty(C)
        for c, j in enumerate(j_conf):
            try:
                conf[c] = float(r[j])
            except (TypeError, ValueError):
                raise PredictionFormatError(f"row {line}: bad confidence value {r[j]!r}") from None
        if not np.all(np.isfinite(conf)):
            raise PredictionFormatError(f"row {line}: non-finite confidence")
        row_ids.append(_as_int(r[j_row], "row_id", line))
        folds.append(_as_int(r[j_fold], "fold", line) if j_fold is not None else 0)
        preds.append(lookup[label])
        confs.append(conf)
    row_ids = np.asarray(row_ids, dtype=np.int64)
    order = np.argsort(row_ids, kind="mergesort")
    row_ids = row_ids[order]
    dup = np.flatnonzero(np.diff(row_ids) == 0)
    if dup.size:
        raise PredictionFormatError(f"duplicate row_id {int(row_ids[dup[0]])} within repeat 0")
    return ParsedPredictions(
        class_labels=class_labels,
        row_ids=row_ids,
        folds=np.asarray(folds, dtype=np.int64)[order],
        predicted=np.asarray(preds, dtype=np.int64)[order],
        confidences=np.asarray(confs, dtype=float).reshape(-1, C)[order],
    )


# ---------------------------------------------------------------- discrepancies

@dataclass(frozen=True)
class RepairPolicy:
    eps_sum: float = 1e-6
    eps_tie: float = 1e-9
    # share of mismatching rows above which a run's confidences count as degenerate
    degenerate_fraction: float = 0.5


def _tie_gap_ok(max_conf: float, pred_conf: float, eps_tie: float) -> bool:
    # a few ulps of slack: 0.5000000005 - 0.4999999995 is not exactly 1e-9 in binary
    return max_conf - pred_conf <= eps_tie + 4 * np.spacing(max(abs(max_conf), 1.0))


def classify_discrepancy(row: PredictionRow, eps_sum: float = 1e-6, eps_tie: float = 1e-9,
                         run_degenerate: bool = False) -> DiscrepancyClass:
    """Classify one prediction row.

    ``run_degenerate`` marks rows of a run whose confidences carry no
    information about its predictions (see :func:`is_degenerate_run`).
    """
    conf = np.asarray(list(row.confidence.values()), dtype=float)
    labels = list(row.confidence.keys())
    p = conf[labels.index(row.predicted_label)]
    m = conf.max()
    total = conf.sum()
    if p == m:
        if abs(total - 1.0) > eps_sum:
            return DiscrepancyClass.RENORMALIZED
        return DiscrepancyClass.CONSISTENT
    if _tie_gap_ok(m, p, eps_tie):
        return DiscrepancyClass.PRECISION_FIXED
    if run_degenerate:
        return DiscrepancyClass.NONREPRESENTATIVE_FIXED
    return DiscrepancyClass.UNEXPLAINABLE


def _mismatch_mask(parsed: ParsedPredictions, eps_tie: float) -> np.ndarray:
    conf = parsed.confidences
    idx = np.arange(len(parsed))
    p = conf[idx, parsed.predicted]
    m = conf.max(axis=1) if len(parsed) else np.empty(0)
    slack = eps_tie + 4 * np.spacing(np.maximum(np.abs(m), 1.0))
    return (p != m) & (m - p > slack)


def is_degenerate_run(parsed: ParsedPredictions, ground_truth: Optional[np.ndarray] = None,
                      policy: RepairPolicy = RepairPolicy()) -> bool:
    """Whether a run's confidences are non-representative of its predictions.

    True when the confidence columns are constant while disagreeing with some
    prediction, or when more than ``policy.degenerate_fraction`` of rows
    disagree and (given ``ground_truth`` codes aligned with the rows) the
    predicted labels beat the majority-class rate.
    """
    n = len(parsed)
    if n == 0:
        return False
    mismatch = _mismatch_mask(parsed, policy.eps_tie)
    if not mismatch.any():
        return False
    if np.all(parsed.confidences == parsed.confidences[0]):
        return True
    if mismatch.mean() <= policy.degenerate_fraction:
        return False
    if ground_truth is None:
        return True
    y = np.asarray(ground_truth)
    prior = np.bincount(y, minlength=len(parsed.class_labels)).max() / n
    return float(np.mean(parsed.predicted == y)) > prior


def classify_rows(parsed: ParsedPredictions, policy: RepairPolicy = RepairPolicy(),
                  run_degenerate: bool = False) -> np.ndarray:
    """Vectorized :func:`classify_discrepancy` over all rows of a run."""
    n = len(parsed)
    conf = parsed.confidences
    if n == 0:
        return np.empty(0, dtype=object)
    p = conf[np.arange(n), parsed.predicted]
    m = conf.max(axis=1)
    total = conf.sum(axis=1)
    classes = np.full(n, DiscrepancyClass.UNEXPLAINABLE.value, dtype=object)
    if run_degenerate:
        classes[:] = DiscrepancyClass.NONREPRESENTATIVE_FIXED.value
    slack = policy.eps_tie + 4 * np.spacing(np.maximum(np.abs(m), 1.0))
    classes[(p != m) & (m - p <= slack)] = DiscrepancyClass.PRECISION_FIXED.value
    agree = p == m
    classes[agree] = DiscrepancyClass.CONSISTENT.value
    classes[agree & (np.abs(total - 1.0) > policy.eps_sum)] = DiscrepancyClass.RENORMALIZED.value
    return classes


def repair(parsed: ParsedPredictions, policy: RepairPolicy = RepairPolicy(),
           ground_truth: Optional[np.ndarray] = None):
    """Repair explainable discrepancies of one run.

    Returns ``(repaired, classes, run_corrupted)``. Precision ties swap the
    predicted label's confidence with the row maximum, degenerate runs get
    one-hot rows on the predicted label, and every row that is not
    unexplainable ends up summing to one. Unexplainable rows are untouched.
    """
    out = parsed.copy()
    conf = out.confidences
    degenerate = is_degenerate_run(parsed, ground_truth, policy)
    classes = classify_rows(parsed, policy, degenerate)
    swap = np.flatnonzero(classes == DiscrepancyClass.PRECISION_FIXED.value)
    if swap.size:
        top = np.argmax(conf[swap], axis=1)
        pred = out.predicted[swap]
        top_vals = conf[swap, top].copy()
        conf[swap, top] = conf[swap, pred]
        conf[swap, pred] = top_vals
    onehot = np.flatnonzero(classes == DiscrepancyClass.NONREPRESENTATIVE_FIXED.value)
    if onehot.size:
        conf[onehot] = 0.0
        conf[onehot, out.predicted[onehot]] = 1.0
    keep = classes != DiscrepancyClass.UNEXPLAINABLE.value
    sums = conf.sum(axis=1)
    fix = keep & (np.abs(sums - 1.0) > 1e-12) & (sums > 0)
    conf[fix] /= sums[fix, None]
    zero = keep & (sums <= 0)
    if zero.any():
        # all-zero rows cannot be rescaled; fall back to one-hot on the prediction
        conf[zero] = 0.0
        conf[np.flatnonzero(zero), out.predicted[zero]] = 1.0
    corrupted = bool(np.any(~keep))
    if corrupted:
        log.debug("run has %d unexplainable rows", int(np.sum(~keep)))
    return out, classes, corrupted
