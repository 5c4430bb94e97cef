"""L2-regularised hinge-loss linear SVM trained by dual coordinate descent.

For samples ``x_i`` (augmented with a constant 1 so the bias is just the last
weight) and labels ``y_i`` in {-1, +1} the solver maximises

    D(alpha) = sum_i alpha_i - 1/2 ||sum_i alpha_i y_i x_i||^2,   0 <= alpha_i <= C_i

one coordinate at a time, keeping ``w = sum_i alpha_i y_i x_i`` up to date.
Each epoch visits the active coordinates in a fresh random order; coordinates
stuck at a bound with a gradient pointing outwards are shrunk away and
restored before declaring convergence. The run stops when the spread of
projected gradients over a full pass drops below the tolerance.
"""

from __future__ import annotations

import base64
import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Hashable, Sequence

import numpy as np
from numba import njit

from .errors import (
    DataError,
    DimensionMismatch,
    InsufficientSamplesForFolds,
    NonFiniteFeature,
    SingleClassInput,
)

log = logging.getLogger(__name__)

BIAS_FEATURE = 1.0


@dataclass
class TrainConfig:
    c_grid: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0)
    folds: int = 3
    tolerance: float = 1e-4
    max_iterations: int = 1000
    seed: int = 0
    class_weighting: str = "none"  # or "inverse-frequency"
    shrinking: bool = True
    workers: int = 1

    def __post_init__(self):
        from .errors import ConfigError

        self.c_grid = tuple(float(c) for c in self.c_grid)
        if not self.c_grid or any(not c > 0 for c in self.c_grid):
            raise ConfigError(f"c_grid must be a nonempty list of positive values, got {self.c_grid}")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if not self.tolerance > 0 or self.max_iterations < 1:
            raise ConfigError("tolerance must be positive and max_iterations >= 1")
        if self.class_weighting not in ("none", "inverse-frequency"):
            raise ConfigError(f"unknown class weighting {self.class_weighting!r}")


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    positive_label: str
    c_value: float
    n_epochs: int = 0
    max_violation: float = 0.0
    dual_objective: float = 0.0
    primal_objective: float = 0.0
    dual_history: list[float] = field(default_factory=list, repr=False)
    alphas: np.ndarray | None = field(default=None, repr=False)
    n_positive: int = 0
    n_negative: int = 0
    low_support: bool = False
    backend_id: str = ""

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def duality_gap(self) -> float:
        return self.primal_objective - self.dual_objective

    def decision_values(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise DimensionMismatch(f"model expects {self.dim}-d inputs, got shape {X.shape}")
        return X @ self.weights + self.bias


def decision_value(model: LinearModel, x) -> float:
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    if x.shape != (model.dim,):
        raise DimensionMismatch(f"model expects {model.dim}-d input, got shape {x.shape}")
    return float(x @ model.weights + model.bias)


# --- solver core ------------------------------------------------------------

@njit(cache=True, inline="always")
def _splitmix64(state):
    state = (state + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = state
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    return state, z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def _dual_cd(X, y, upper, alpha, w, seed, tol, max_epochs, shrinking, history):
    n, d = X.shape
    qd = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += X[i, j] * X[i, j]
        qd[i] = s
    index = np.arange(n)
    active = n
    pg_max_old = np.inf
    pg_min_old = -np.inf
    state = np.uint64(seed)
    epoch = 0
    violation = np.inf
    while epoch < max_epochs:
        pg_max_new = -np.inf
        pg_min_new = np.inf
        # Fisher-Yates over the active prefix
        for k in range(active - 1, 0, -1):
            state, r = _splitmix64(state)
            j = np.int64(r % np.uint64(k + 1))
            tmp = index[k]
            index[k] = index[j]
            index[j] = tmp
        s = 0
        while s < active:
            i = index[s]
            dot = 0.0
            for j in range(d):
                dot += w[j] * X[i, j]
            g = y[i] * dot - 1.0
            c = upper[i]
            pg = 0.0
            if alpha[i] == 0.0:
                if shrinking and g > pg_max_old:
                    active -= 1
                    index[s] = index[active]
                    index[active] = i
                    continue
                elif g < 0.0:
                    pg = g
            elif alpha[i] == c:
                if shrinking and g < pg_min_old:
                    active -= 1
                    index[s] = index[active]
                    index[active] = i
                    continue
                elif g > 0.0:
                    pg = g
            else:
                pg = g
            if pg > pg_max_new:
                pg_max_new = pg
            if pg < pg_min_new:
                pg_min_new = pg
            if abs(pg) > 1e-12 and qd[i] > 0.0:
                old = alpha[i]
                new = old - g / qd[i]
                if new < 0.0:
                    new = 0.0
                elif new > c:
                    new = c
                alpha[i] = new
                step = (new - old) * y[i]
                if step != 0.0:
                    for j in range(d):
                        w[j] += step * X[i, j]
            s += 1

        # dual objective with w recomputed from alpha, so drift in the
        # incremental w cannot masquerade as progress
        ww = np.zeros(d)
        asum = 0.0
        for i in range(n):
            asum += alpha[i]
            if alpha[i] != 0.0:
                for j in range(d):
                    ww[j] += alpha[i] * y[i] * X[i, j]
        history[epoch] = asum - 0.5 * np.dot(ww, ww)
        epoch += 1

        violation = pg_max_new - pg_min_new
        if active == 0:
            violation = 0.0
        if violation <= tol:
            if active == n:
                break
            active = n
            pg_max_old = np.inf
            pg_min_old = -np.inf
            continue
        pg_max_old = pg_max_new if pg_max_new > 0.0 else np.inf
        pg_min_old = pg_min_new if pg_min_new < 0.0 else -np.inf
    return epoch, violation


def augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.full((X.shape[0], 1), BIAS_FEATURE)])


def _problem_seed(seed: int, label: Hashable) -> int:
    return (int(seed) * 1_000_003 + zlib.crc32(str(label).encode("utf-8"))) & 0xFFFFFFFFFFFFFFFF


def _check_inputs(X, y) -> tuple[np.ndarray, np.ndarray]:
    try:
        X = np.asarray([getattr(x, "values", x) for x in X] if not isinstance(X, np.ndarray) else X, dtype=np.float64)
    except ValueError:
        raise DimensionMismatch("feature vectors have differing dimensions") from None
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d feature matrix, got shape {X.shape}")
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} feature vectors but {y.shape[0]} labels")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise DataError("binary labels must be -1 or +1")
    if X.shape[0] < 2 or np.unique(y).size < 2:
        raise SingleClassInput("binary training needs at least one positive and one negative sample")
    if not np.all(np.isfinite(X)):
        raise NonFiniteFeature("feature matrix contains NaN or infinite values")
    return X, y


def _sample_upper_bounds(y: np.ndarray, c: float, weighting: str) -> np.ndarray:
    upper = np.full(y.shape[0], float(c))
    if weighting == "inverse-frequency":
        n = y.shape[0]
        for label in (-1.0, 1.0):
            mask = y == label
            upper[mask] = c * n / (2.0 * mask.sum())
    return upper


def train_binary(
    X,
    y,
    c: float,
    cfg: TrainConfig | None = None,
    positive_label: str = "+1",
    seed: int | None = None,
) -> LinearModel:
    cfg = cfg or TrainConfig()
    X, y = _check_inputs(X, y)
    Xa = np.ascontiguousarray(augment(X))
    upper = _sample_upper_bounds(y, c, cfg.class_weighting)
    alpha = np.zeros(Xa.shape[0])
    w = np.zeros(Xa.shape[1])
    history = np.empty(cfg.max_iterations)
    run_seed = _problem_seed(cfg.seed if seed is None else seed, positive_label)
    n_epochs, violation = _dual_cd(
        Xa, y, upper, alpha, w, np.uint64(run_seed), float(cfg.tolerance),
        int(cfg.max_iterations), bool(cfg.shrinking), history,
    )
    if n_epochs >= cfg.max_iterations and violation > cfg.tolerance:
        log.warning("solver hit %d epochs for %r (violation %.3g)", n_epochs, positive_label, violation)

    w = Xa.T @ (alpha * y)
    margins = y * (Xa @ w)
    hinge = np.maximum(0.0, 1.0 - margins)
    n_pos = int((y > 0).sum())
    return LinearModel(
        weights=w[:-1].copy(),
        bias=float(w[-1] * BIAS_FEATURE),
        positive_label=str(positive_label),
        c_value=float(c),
        n_epochs=int(n_epochs),
        max_violation=float(violation),
        dual_objective=float(alpha.sum() - 0.5 * w @ w),
        primal_objective=float(0.5 * w @ w + upper @ hinge),
        dual_history=history[:n_epochs].tolist(),
        alphas=alpha,
        n_positive=n_pos,
        n_negative=int(y.shape[0] - n_pos),
        low_support=n_pos < 2,
    )


def hinge_loss(model: LinearModel, X, y) -> float:
    margins = np.asarray(y, dtype=np.float64) * model.decision_values(X)
    return float(np.maximum(0.0, 1.0 - margins).sum())


# --- multiclass -------------------------------------------------------------

def _pmap(fn: Callable, items: Sequence, workers: int) -> list:
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def train_one_vs_all(X, labels: Sequence[str], c: float, cfg: TrainConfig | None = None) -> list[LinearModel]:
    """One binary model per class present in ``labels``, sorted by class code."""
    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=object)
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise SingleClassInput(f"one-vs-all needs at least 2 classes, got {classes}")

    def fit(cls):
        y = np.where(labels == cls, 1.0, -1.0)
        model = train_binary(X, y, c, cfg, positive_label=cls)
        if model.low_support:
            log.info("class %s has %d positive sample(s); model flagged low-support", cls, model.n_positive)
        return model

    return _pmap(fit, classes, cfg.workers)


def predict_multiclass(models: Sequence[LinearModel], x) -> str:
    """Class with the largest decision value; ties go to the smallest class code."""
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    best_label, best_score = None, -np.inf
    for m in sorted(models, key=lambda m: m.positive_label):
        score = decision_value(m, x)
        if score > best_score or best_label is None:
            best_label, best_score = m.positive_label, score
    return best_label


def predict_multiclass_batch(models: Sequence[LinearModel], X) -> list[str]:
    ordered = sorted(models, key=lambda m: m.positive_label)
    X = np.asarray(X, dtype=np.float64)
    scores = np.column_stack([m.decision_values(X) for m in ordered])
    # argmax returns the first maximum, i.e. the smallest code
    winners = scores.argmax(axis=1)
    return [ordered[k].positive_label for k in winners]


# --- cross-validation ---------------------------------------------------------

def stratified_folds(labels: Sequence, folds: int, seed: int) -> list[np.ndarray]:
    """Shuffle each class with the seed and deal its members round-robin into folds."""
    labels = np.asarray(labels, dtype=object)
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for cls in sorted(set(labels.tolist()), key=str):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(members.size)]
        assignment[members] = (np.arange(members.size) + offset) % folds
        offset += members.size
    return [np.flatnonzero(assignment == k) for k in range(folds)]


@dataclass
class CVResult:
    best_c: float
    mean_scores: dict[float, float]
    std_scores: dict[float, float]
    fold_scores: dict[float, list[float]]
    fold_accuracies: dict[float, list[float]]

    def summary(self) -> dict:
        return {
            "best_c": self.best_c,
            "score": "mean f1 over folds; +/- is the sample standard deviation across folds",
            "per_c": [
                {
                    "c": c,
                    "mean_f1": self.mean_scores[c],
                    "std_f1": self.std_scores[c],
                    "fold_f1": self.fold_scores[c],
                    "fold_accuracy": self.fold_accuracies[c],
                }
                for c in sorted(self.mean_scores)
            ],
        }


def _is_binary(labels) -> bool:
    try:
        values = set(float(v) for v in labels)
    except (TypeError, ValueError):
        return False
    return values <= {-1.0, 1.0}


def cross_validate(X, labels: Sequence, cfg: TrainConfig | None = None) -> CVResult:
    """Pick C from ``cfg.c_grid`` by mean f1 over stratified folds; ties go to the smaller C.

    Labels in {-1, +1} are treated as one binary problem, anything else as
    one-vs-all over class codes.
    """
    from .metrics import evaluate

    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    labels = list(labels)
    binary = _is_binary(labels)
    if binary:
        labels = [1.0 if float(v) > 0 else -1.0 for v in labels]
    if len(labels) < cfg.folds:
        raise InsufficientSamplesForFolds(f"{len(labels)} samples cannot fill {cfg.folds} folds")
    folds = stratified_folds(labels, cfg.folds, cfg.seed)
    lab = np.asarray(labels, dtype=object)
    for k, test_idx in enumerate(folds):
        train_classes = set(np.delete(lab, test_idx).tolist())
        if test_idx.size == 0 or len(train_classes) < 2:
            raise InsufficientSamplesForFolds(
                f"fold {k} leaves {len(train_classes)} class(es) for training; need 2"
            )

    def run(job):
        c, k = job
        test_idx = folds[k]
        train_idx = np.setdiff1d(np.arange(len(labels)), test_idx)
        if binary:
            model = train_binary(X[train_idx], lab[train_idx].astype(np.float64), c, cfg, positive_label="+1")
            pred = np.where(model.decision_values(X[test_idx]) >= 0, 1.0, -1.0).tolist()
        else:
            serial = TrainConfig(**{**cfg.__dict__, "workers": 1})
            models = train_one_vs_all(X[train_idx], lab[train_idx].tolist(), c, serial)
            pred = predict_multiclass_batch(models, X[test_idx])
        report = evaluate(pred, lab[test_idx].tolist())
        return report.mean_f1, report.accuracy

    jobs = [(c, k) for c in cfg.c_grid for k in range(cfg.folds)]
    results = dict(zip(jobs, _pmap(run, jobs, cfg.workers)))

    fold_scores = {c: [results[(c, k)][0] for k in range(cfg.folds)] for c in cfg.c_grid}
    fold_acc = {c: [results[(c, k)][1] for k in range(cfg.folds)] for c in cfg.c_grid}
    means = {c: float(np.mean(v)) for c, v in fold_scores.items()}
    stds = {c: float(np.std(v, ddof=1)) for c, v in fold_scores.items()}
    best = max(sorted(means), key=lambda c: means[c])  # max keeps the first, i.e. smallest, C on ties
    return CVResult(best, means, stds, fold_scores, fold_acc)


# --- model files --------------------------------------------------------------

def model_to_dict(model: LinearModel) -> dict:
    return {
        "positive_label": model.positive_label,
        "bias": model.bias,
        "c_value": model.c_value,
        "dim": model.dim,
        "backend_id": model.backend_id,
        "weights_f32": base64.b64encode(np.asarray(model.weights, dtype="<f4").tobytes()).decode("ascii"),
        "n_epochs": model.n_epochs,
        "max_violation": model.max_violation,
        "dual_objective": model.dual_objective,
        "primal_objective": model.primal_objective,
        "n_positive": model.n_positive,
        "n_negative": model.n_negative,
        "low_support": model.low_support,
    }


def model_from_dict(doc: dict) -> LinearModel:
    weights = np.frombuffer(base64.b64decode(doc["weights_f32"]), dtype="<f4").astype(np.float64)
    if weights.shape[0] != int(doc["dim"]):
        raise DataError(f"model {doc.get('positive_label')!r}: weight block does not match dim {doc['dim']}")
    return LinearModel(
        weights=weights,
        bias=float(doc["bias"]),
        positive_label=str(doc["positive_label"]),
        c_value=float(doc["c_value"]),
        n_epochs=int(doc.get("n_epochs", 0)),
        max_violation=float(doc.get("max_violation", 0.0)),
        dual_objective=float(doc.get("dual_objective", 0.0)),
        primal_objective=float(doc.get("primal_objective", 0.0)),
        n_positive=int(doc.get("n_positive", 0)),
        n_negative=int(doc.get("n_negative", 0)),
        low_support=bool(doc.get("low_support", False)),
        backend_id=str(doc.get("backend_id", "")),
    )


def round_to_f32(model: LinearModel) -> LinearModel:
    """Weights as they will read back from a model file."""
    model.weights = np.asarray(model.weights, dtype=np.float32).astype(np.float64)
    model.bias = float(model.bias)
    return model


def save_json(doc: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
