import math

import numpy as np
import pytest
import mpmath
from hypothesis import given, settings, strategies as st

from benthoscan.errors import EmptyTestSet, LengthMismatch
from benthoscan.metrics import (
    TABLE_COLUMNS,
    betainc_regularized,
    evaluate,
    f1,
    paired_t_test,
    t_cdf,
    t_ppf,
)
from oracles import confusion_report, t_test_reference


def test_f1_examples():
    assert f1(0.5, 0.5) == 0.5
    assert f1(0.0, 0.0) == 0.0
    assert f1(0.64, 0.59) == pytest.approx(0.6139, abs=1e-4)


def test_all_correct():
    r = evaluate(list("abcab"), list("abcab"))
    assert r.accuracy == 1.0 and r.mean_f1 == 1.0
    assert all(m.f1 == 1.0 for m in r.per_class.values())


def test_hand_computed_binary_confusion():
    # tp=3, fp=1, fn=2, tn=4
    truth = ["k"] * 3 + ["n"] + ["k"] * 2 + ["n"] * 4
    pred = ["k"] * 3 + ["k"] + ["n"] * 2 + ["n"] * 4
    r = evaluate(pred, truth, kelp_label="k")
    k = r.per_class["k"]
    assert (k.tp, k.fp, k.fn, k.tn) == (3, 1, 2, 4)
    assert k.precision == 0.75 and k.recall == 0.6
    assert k.f1 == pytest.approx(2 / 3, abs=1e-3)
    assert r.accuracy == 0.7
    assert (r.kelp_precision, r.kelp_recall) == (0.75, 0.6)
    row = r.table_row()
    assert list(row) == list(TABLE_COLUMNS)
    assert row["Accuracy (%)"] == 70.0 and row["Precision of Kelps (%)"] == 75.0


def test_ten_class_random_report_matches_confusion_script():
    rng = np.random.default_rng(0)
    classes = [f"C{i}" for i in range(10)]
    truth = list(rng.choice(classes, size=500))
    pred = [t if rng.random() < 0.4 else rng.choice(classes) for t in truth]
    r = evaluate(pred, truth)
    ref = confusion_report(pred, truth)
    assert r.accuracy == ref["accuracy"] and r.mean_f1 == ref["mean_f1"]
    for cls, m in r.per_class.items():
        exp = ref["per_class"][cls]
        assert (m.tp, m.fp, m.fn, m.tn, m.support) == (exp["tp"], exp["fp"], exp["fn"], exp["tn"], exp["support"])
        assert (m.precision, m.recall, m.f1) == (exp["precision"], exp["recall"], exp["f1"])


def test_unpredicted_class_scores_zero_and_absent_class_is_excluded():
    r = evaluate(["a", "a", "c"], ["a", "b", "a"])
    assert r.per_class["b"].precision == 0.0 and r.per_class["b"].precision_undefined
    # c is predicted but never true: it has a row but no say in the mean
    assert r.classes_in_mean == ["a", "b"]
    assert r.mean_f1 == (r.per_class["a"].f1 + r.per_class["b"].f1) / 2


def test_evaluate_errors():
    with pytest.raises(LengthMismatch):
        evaluate(["a"], ["a", "b"])
    with pytest.raises(EmptyTestSet):
        evaluate([], [])


def test_t_test_degenerate_cases():
    same = paired_t_test([1, 0, 1], [1, 0, 1])
    assert same.p_value == 1.0 and same.flag == "all-differences-zero"
    const = paired_t_test([1, 1, 1, 1], [0, 0, 0, 0])
    assert const.t_statistic == math.inf and const.p_value == 0.0 and const.flag == "constant-difference"
    assert paired_t_test([0, 0, 0, 0], [1, 1, 1, 1]).t_statistic == -math.inf
    with pytest.raises(LengthMismatch):
        paired_t_test([1], [0])


def test_textbook_t_test():
    d = [0.8, 1.9, -0.3, 1.1, 0.2, 2.4, 0.9, -0.6, 1.7, 0.5]
    res = paired_t_test(d, [0.0] * 10)
    t_ref, p_ref = t_test_reference(d)
    assert res.df == 9
    assert res.t_statistic == pytest.approx(t_ref, abs=1e-9)
    assert abs(res.p_value - p_ref) < 1e-6


def reference_t_cdf(t, df):
    tail = mpmath.betainc(df / 2, 0.5, 0, df / (df + t * t), regularized=True) / 2
    return float(tail if t < 0 else 1 - tail)


def test_t_distribution_helpers():
    for df in (1, 2, 5, 18, 200):
        for t in (-3.0, -0.5, 0.0, 1.2, 4.0):
            assert abs(t_cdf(t, df) - reference_t_cdf(t, df)) < 1e-10
    assert t_ppf(0.975, 18) == pytest.approx(2.10092204024096, abs=1e-9)
    assert t_ppf(0.5, 7) == pytest.approx(0.0, abs=1e-12)
    for a, b, x in ((0.5, 0.5, 0.3), (4.5, 0.5, 0.9), (30.0, 0.5, 0.99), (2.0, 3.0, 0.01)):
        ref = float(mpmath.betainc(a, b, 0, x, regularized=True))
        assert betainc_regularized(a, b, x) == pytest.approx(ref, abs=1e-12)


pairs = st.integers(2, 60).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 1), min_size=n, max_size=n), st.lists(st.integers(0, 1), min_size=n, max_size=n))
)


@settings(max_examples=80, deadline=None)
@given(ab=pairs)
def test_t_test_antisymmetry(ab):
    a, b = ab
    x, y = paired_t_test(a, b), paired_t_test(b, a)
    assert x.t_statistic == -y.t_statistic or (x.t_statistic == 0 and y.t_statistic == 0)
    assert x.p_value == y.p_value
    assert 0.0 <= x.p_value <= 1.0


labelled = st.lists(st.tuples(st.sampled_from("abcd"), st.sampled_from("abcd")), min_size=1, max_size=80)


@settings(max_examples=80, deadline=None)
@given(rows=labelled, seed=st.integers(0, 2**31))
def test_metric_properties(rows, seed):
    pred, truth = zip(*rows)
    r = evaluate(pred, truth)
    perm = np.random.default_rng(seed).permutation(len(rows))
    r2 = evaluate([pred[i] for i in perm], [truth[i] for i in perm])
    assert r2.accuracy == r.accuracy and r2.mean_f1 == pytest.approx(r.mean_f1, abs=1e-15)
    assert r2.per_class == r.per_class
    weighted = sum(m.recall * m.support for m in r.per_class.values()) / len(rows)
    assert r.accuracy == pytest.approx(weighted, abs=1e-12)
    for m in r.per_class.values():
        assert 0 <= m.f1 <= (m.precision + m.recall) / 2 + 1e-15
        assert m.tp + m.fp + m.fn + m.tn == len(rows)


@given(p=st.floats(0, 1), r=st.floats(0, 1))
def test_f1_harmonic_bounds(p, r):
    v = f1(p, r)
    assert v <= (p + r) / 2 + 1e-15
    if p == r:
        assert v == pytest.approx(p, abs=1e-15)
