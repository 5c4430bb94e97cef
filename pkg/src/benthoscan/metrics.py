"""Classification metrics and the paired t-test.

Student-t tail probabilities come from the regularised incomplete beta
function, evaluated with a modified Lentz continued fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .errors import EmptyTestSet, LengthMismatch

TABLE_COLUMNS = ("Accuracy (%)", "Mean f1-score", "Precision of Kelps (%)", "Recall of Kelps (%)")


def f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class ClassMetrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    support: int
    precision_undefined: bool = False


@dataclass
class MetricsReport:
    accuracy: float
    per_class: dict[str, ClassMetrics]
    mean_f1: float
    n: int
    kelp_label: str | None = None
    kelp_precision: float | None = None
    kelp_recall: float | None = None
    classes_in_mean: list[str] = field(default_factory=list)

    def table_row(self) -> dict[str, float | None]:
        pct = lambda v: None if v is None else round(100.0 * v, 6)
        return {
            TABLE_COLUMNS[0]: pct(self.accuracy),
            TABLE_COLUMNS[1]: round(self.mean_f1, 6),
            TABLE_COLUMNS[2]: pct(self.kelp_precision),
            TABLE_COLUMNS[3]: pct(self.kelp_recall),
        }

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "mean_f1": self.mean_f1,
            "n": self.n,
            "kelp_label": self.kelp_label,
            "kelp_precision": self.kelp_precision,
            "kelp_recall": self.kelp_recall,
            "classes_in_mean": self.classes_in_mean,
            "per_class": {
                k: {
                    "precision": v.precision,
                    "recall": v.recall,
                    "f1": v.f1,
                    "support": v.support,
                    "tp": v.tp,
                    "fp": v.fp,
                    "fn": v.fn,
                    "tn": v.tn,
                    "precision_undefined": v.precision_undefined,
                }
                for k, v in self.per_class.items()
            },
        }


def confusion_matrix(predictions: Sequence[Hashable], truth: Sequence[Hashable], classes: Sequence[Hashable]) -> np.ndarray:
    """Rows are true classes, columns predicted classes, both in ``classes`` order."""
    index = {c: i for i, c in enumerate(classes)}
    t = np.fromiter((index[v] for v in truth), dtype=np.int64, count=len(truth))
    p = np.fromiter((index[v] for v in predictions), dtype=np.int64, count=len(predictions))
    mat = np.zeros((len(classes), len(classes)), dtype=np.int64)
    np.add.at(mat, (t, p), 1)
    return mat


def evaluate(
    predictions: Sequence[Hashable],
    truth: Sequence[Hashable],
    classes: Sequence[Hashable] | None = None,
    kelp_label: Hashable | None = None,
) -> MetricsReport:
    """Accuracy, one-vs-rest precision/recall/f1 per class and mean f1.

    Mean f1 averages only classes that occur in ``truth``. A class that is
    never predicted gets precision 0 and is flagged rather than dropped.
    """
    predictions = list(predictions)
    truth = list(truth)
    if len(predictions) != len(truth):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(truth)} ground-truth labels")
    if not truth:
        raise EmptyTestSet("no test samples to evaluate")
    present = set(truth) | set(predictions)
    if classes is None:
        classes = sorted(present, key=str)
    else:
        classes = list(classes) + sorted(present - set(classes), key=str)

    mat = confusion_matrix(predictions, truth, classes)
    total = int(mat.sum())
    tp = np.diag(mat)
    pred_totals = mat.sum(axis=0)
    support = mat.sum(axis=1)

    per_class: dict[str, ClassMetrics] = {}
    for i, cls in enumerate(classes):
        fp = int(pred_totals[i] - tp[i])
        fn = int(support[i] - tp[i])
        undefined = pred_totals[i] == 0
        precision = 0.0 if undefined else tp[i] / pred_totals[i]
        recall = tp[i] / support[i] if support[i] else 0.0
        per_class[str(cls)] = ClassMetrics(
            tp=int(tp[i]), fp=fp, fn=fn, tn=total - int(tp[i]) - fp - fn,
            precision=float(precision), recall=float(recall), f1=f1(float(precision), float(recall)),
            support=int(support[i]), precision_undefined=bool(undefined),
        )

    in_mean = [str(c) for i, c in enumerate(classes) if support[i] > 0]
    report = MetricsReport(
        accuracy=float(tp.sum() / total),
        per_class=per_class,
        mean_f1=sum(per_class[c].f1 for c in in_mean) / len(in_mean),
        n=total,
        classes_in_mean=in_mean,
    )
    if kelp_label is not None:
        kelp = per_class.get(str(kelp_label))
        report.kelp_label = str(kelp_label)
        report.kelp_precision = kelp.precision if kelp else 0.0
        report.kelp_recall = kelp.recall if kelp else 0.0
    return report


# --- Student t distribution ---------------------------------------------------

def _betacf(a: float, b: float, x: float, eps: float = 1e-15, max_iter: int = 10_000) -> float:
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x={x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    if math.isnan(t):
        return math.nan
    if math.isinf(t):
        return 0.0
    return betainc_regularized(df / 2.0, 0.5, df / (df + t * t))


def t_cdf(t: float, df: float) -> float:
    half = 0.5 * t_two_sided_p(t, df)
    return 1.0 - half if t > 0 else half


def t_ppf(q: float, df: float, tol: float = 1e-13) -> float:
    """Quantile of Student's t by bisection on :func:`t_cdf`."""
    if not 0.0 < q < 1.0:
        raise ValueError("quantile must lie in (0, 1)")
    if q == 0.5:
        return 0.0
    lo, hi = -1.0, 1.0
    while t_cdf(lo, df) > q:
        lo *= 2.0
    while t_cdf(hi, df) < q:
        hi *= 2.0
    while hi - lo > tol * max(1.0, abs(lo)):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, df) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    p_value: float
    df: int
    mean_difference: float
    flag: str | None = None  # "all-differences-zero" or "constant-difference"


def paired_t_test(correct_a: Sequence[float], correct_b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test on per-sample differences ``a - b``."""
    a = np.asarray(correct_a, dtype=np.float64)
    b = np.asarray(correct_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"paired samples must be equal-length vectors, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise LengthMismatch("paired t-test needs at least 2 pairs")
    d = a - b
    mean = float(d.mean())
    df = n - 1
    if not np.any(d):
        return TTestResult(0.0, 1.0, df, 0.0, "all-differences-zero")
    if np.all(d == d[0]):
        return TTestResult(math.copysign(math.inf, mean), 0.0, df, mean, "constant-difference")
    t = mean / (float(d.std(ddof=1)) / math.sqrt(n))
    return TTestResult(t, t_two_sided_p(t, df), df, mean)
