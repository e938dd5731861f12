import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import CORPUS, PREDICTION_CORPUS
from metatasks.model import DiscrepancyClass as D
from metatasks.predictions import (ParsedPredictions, PredictionFormatError, PredictionRow,
                                   RepairPolicy, UnsupportedFormatError, classify_discrepancy,
                                   classify_rows, is_degenerate_run, parse_prediction_file, repair)

LABELS = ("no", "yes")

def load(name) -> ParsedPredictions:
    return parse_prediction_file((PREDICTION_CORPUS / name).read_bytes(), LABELS)


def parsed(pred, conf, labels=LABELS):
    conf = np.asarray(conf, dtype=float)
    n = len(conf)
    return ParsedPredictions(tuple(labels), np.arange(n), np.zeros(n, dtype=np.int64),
                             np.asarray(pred, dtype=np.int64), conf)


@pytest.mark.parametrize("name", sorted(CORPUS))
def test_corpus_discrepancy_classes(name):
    p = load(name)
    _, classes, corrupted = repair(p)
    assert list(classes) == [c.value for c in CORPUS[name]]
    assert corrupted == (name == "unexplainable.csv")


def test_arff_keeps_first_repeat_sorted_by_row_id():
    p = load("arff_prediction_dot.arff")
    np.testing.assert_array_equal(p.row_ids, [0, 1, 2, 3])
    np.testing.assert_array_equal(p.folds, [0, 1, 1, 0])
    assert list(p.predicted_labels) == ["no", "yes", "no", "yes"]
    assert p.row(1).confidence == {"no": 0.5000000005, "yes": 0.4999999995}


def test_pred_and_prediction_columns_parse_identically():
    a, b = load("csv_pred_underscore.csv"), load("csv_rowid_fold.csv")
    for field in ("row_ids", "folds", "predicted", "confidences"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))


def test_header_example_parses():
    data = b"row_id,fold,prediction,confidence.yes,confidence.no\n0,0,yes,0.9,0.1\n1,0,no,0.2,0.8\n"
    p = parse_prediction_file(data, ["yes", "no"])
    np.testing.assert_array_equal(p.confidences, [[0.9, 0.1], [0.2, 0.8]])


@pytest.mark.parametrize("data, fragment", [
    (b"row_id,prediction,confidence.no,confidence.maybe\n0,no,1,0\n", "maybe"),
    (b"row_id,guess,confidence.no,confidence.yes\n0,no,1,0\n", "prediction"),
    (b"row_id,prediction,confidence.no,confidence.yes,weird\n0,no,1,0,1\n", "weird"),
    (b"id,prediction,confidence.no,confidence.yes\n0,no,1,0\n", "row_id"),
])
def test_unknown_layouts_list_detected_columns(data, fragment):
    with pytest.raises(UnsupportedFormatError) as e:
        parse_prediction_file(data, LABELS)
    assert fragment in str(e.value) and "detected columns" in str(e.value)


def test_duplicate_row_id_rejected():
    data = b"row_id,prediction,confidence.no,confidence.yes\n0,no,1,0\n0,yes,0,1\n"
    with pytest.raises(PredictionFormatError, match="duplicate row_id 0"):
        parse_prediction_file(data, LABELS)


def test_bad_values_rejected():
    with pytest.raises(PredictionFormatError, match="row 1"):
        parse_prediction_file(b"row_id,prediction,confidence.no,confidence.yes\n0,no,x,0\n", LABELS)
    with pytest.raises(PredictionFormatError, match="predicted label"):
        parse_prediction_file(b"row_id,prediction,confidence.no,confidence.yes\n0,maybe,1,0\n", LABELS)
    with pytest.raises(PredictionFormatError):
        parse_prediction_file(b"", LABELS)


def test_classify_examples():
    assert classify_discrepancy(PredictionRow(0, 0, "A", {"A": 0.4999999995, "B": 0.5000000005})) is D.PRECISION_FIXED
    assert classify_discrepancy(PredictionRow(0, 0, "A", {"A": 0.7, "B": 0.3})) is D.CONSISTENT
    assert classify_discrepancy(PredictionRow(0, 0, "A", {"A": 0.1, "B": 0.9})) is D.UNEXPLAINABLE
    assert classify_discrepancy(PredictionRow(0, 0, "A", {"A": 0.686, "B": 0.294})) is D.RENORMALIZED
    assert classify_discrepancy(PredictionRow(0, 0, "A", {"A": 0.1, "B": 0.9}),
                                run_degenerate=True) is D.NONREPRESENTATIVE_FIXED


@given(st.floats(1e-12, 1e-3), st.floats(1e-15, 1e-3), st.integers(0, 1000))
def test_consistent_rows_are_eps_free(eps_sum, eps_tie, seed):
    rng = np.random.default_rng(seed)
    conf = rng.dirichlet(np.ones(3))
    labels = ["a", "b", "c"]
    row = PredictionRow(0, 0, labels[int(np.argmax(conf))], dict(zip(labels, conf.tolist())))
    if abs(conf.sum() - 1) <= min(eps_sum, 1e-6):
        assert classify_discrepancy(row, eps_sum, eps_tie) is D.CONSISTENT


@given(st.integers(0, 10_000))
def test_vectorized_classification_matches_row_rule(seed):
    rng = np.random.default_rng(seed)
    n, C = 30, int(rng.integers(2, 4))
    conf = rng.dirichlet(np.ones(C), size=n) * rng.choice([1.0, 0.97], size=(n, 1))
    pred = rng.integers(0, C, size=n)
    # plant some near-ties
    near = rng.random(n) < 0.3
    top = np.argmax(conf, axis=1)
    conf[near, pred[near]] = conf[near, top[near]] - rng.choice([0.0, 5e-10, 2e-9], size=near.sum())
    labels = [f"l{c}" for c in range(C)]
    p = parsed(pred, conf, labels)
    for degenerate in (False, True):
        vec = classify_rows(p, RepairPolicy(), degenerate)
        rowwise = [classify_discrepancy(p.row(i), run_degenerate=degenerate).value for i in range(n)]
        assert list(vec) == rowwise


def test_renormalized_row_sums_to_one():
    out, classes, corrupted = repair(parsed([0], [[0.686, 0.294]]))
    assert classes[0] == D.RENORMALIZED.value and not corrupted
    np.testing.assert_allclose(out.confidences[0], [0.7, 0.3], rtol=0, atol=1e-15)


def test_precision_fix_swaps_values():
    out, classes, _ = repair(parsed([0], [[0.4999999995, 0.5000000005]]))
    assert classes[0] == D.PRECISION_FIXED.value
    assert out.confidences[0].tolist() == [0.5000000005, 0.4999999995]


def test_all_consistent_is_identity():
    p = load("csv_rowid_fold.csv")
    out, classes, corrupted = repair(p)
    np.testing.assert_array_equal(out.confidences, p.confidences)
    assert not corrupted


def test_one_unexplainable_row_among_500():
    rng = np.random.default_rng(0)
    conf = rng.dirichlet([1, 1], size=500)
    conf[np.abs(conf[:, 0] - 0.5) < 1e-3] = [0.7, 0.3]
    pred = np.argmax(conf, axis=1)
    conf[7] = [0.02, 0.96]  # renormalizable
    pred[7] = 1
    pred[42] = 1 - np.argmax(conf[42])  # unexplainable
    p = parsed(pred, conf)
    out, classes, corrupted = repair(p)
    assert corrupted
    assert list(np.flatnonzero(classes == D.UNEXPLAINABLE.value)) == [42]
    assert classes[7] == D.RENORMALIZED.value
    np.testing.assert_array_equal(out.confidences[42], p.confidences[42])
    assert abs(out.confidences[7].sum() - 1) <= 1e-12


def test_degenerate_detection():
    const = load("degenerate_constant.csv")
    assert is_degenerate_run(const)
    # many mismatches but predictions no better than the majority class
    p = parsed([1, 1, 1, 0], [[0.9, 0.1]] * 3 + [[0.8, 0.2]])
    assert not is_degenerate_run(p, ground_truth=np.array([0, 0, 0, 1]))
    assert is_degenerate_run(p, ground_truth=np.array([1, 1, 1, 0]))
    assert not is_degenerate_run(load("unexplainable.csv"))


def test_degenerate_run_becomes_one_hot():
    out, classes, corrupted = repair(load("degenerate_constant.csv"))
    assert not corrupted
    np.testing.assert_array_equal(out.confidences[1], [0.0, 1.0])
    np.testing.assert_array_equal(out.confidences[0], [0.6, 0.4])


def random_run(rng):
    n, C = int(rng.integers(1, 40)), int(rng.integers(2, 4))
    conf = rng.dirichlet(np.ones(C), size=n) * rng.choice([1.0, 0.98, 1.0 + 1e-5], size=(n, 1))
    pred = np.argmax(conf, axis=1)
    flip = rng.random(n) < rng.choice([0.0, 0.1, 0.7])
    pred[flip] = rng.integers(0, C, size=flip.sum())
    tie = rng.random(n) < 0.2
    conf[tie, pred[tie]] = conf[tie].max(axis=1) - 4e-10
    if rng.random() < 0.2:
        conf[:] = conf[0]
    return parsed(pred, conf, [f"l{c}" for c in range(C)]), rng.integers(0, C, size=n)


@given(st.integers(0, 10_000))
def test_repair_postconditions(seed):
    rng = np.random.default_rng(seed)
    p, y = random_run(rng)
    out, classes, corrupted = repair(p, ground_truth=y)
    ok = classes != D.UNEXPLAINABLE.value
    assert corrupted == bool((~ok).any())
    idx = np.flatnonzero(ok)
    assert np.all(out.confidences[idx, out.predicted[idx]] == out.confidences[idx].max(axis=1))
    assert np.all(np.abs(out.confidences[idx].sum(axis=1) - 1) <= 1e-9)
    np.testing.assert_array_equal(out.confidences[~ok], p.confidences[~ok])


@given(st.integers(0, 10_000))
def test_repair_idempotent(seed):
    rng = np.random.default_rng(seed)
    p, y = random_run(rng)
    once, _, c1 = repair(p, ground_truth=y)
    twice, _, c2 = repair(once, ground_truth=y)
    np.testing.assert_array_equal(once.confidences, twice.confidences)
    np.testing.assert_array_equal(once.predicted, twice.predicted)
    assert c1 == c2


@pytest.mark.parametrize("name", sorted(CORPUS))
def test_corpus_repair_idempotent(name):
    once, _, c1 = repair(load(name))
    twice, _, c2 = repair(once)
    np.testing.assert_array_equal(once.confidences, twice.confidences)
    assert c1 == c2
