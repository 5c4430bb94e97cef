"""Flat one-vs-all and per-node local binary classifiers.

A local binary classifier for node ``n`` takes as positives every label whose
code lies in the subtree of ``n``. Negatives depend on the policy:

* inclusive: every other label in the training data;
* sibling: only labels under ``n``'s parent but outside ``n``'s subtree.

Node classifiers answer independently; no top-down routing through ancestors
is done at prediction time.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    BenthoscanError,
    ConfigError,
    DimensionMismatch,
    InsufficientSamplesForFolds,
    NoNegatives,
    NoPositives,
    UnsupportedStrategy,
)
from .svm import (
    CVResult,
    LinearModel,
    TrainConfig,
    _pmap,
    cross_validate,
    predict_multiclass_batch,
    train_binary,
    train_one_vs_all,
)
from .taxonomy import TaxonomyTree, descendants, siblings_under

log = logging.getLogger(__name__)


class Policy(str, enum.Enum):
    INCLUSIVE = "inclusive"
    SIBLING = "sibling"


@dataclass(frozen=True)
class Flat:
    name = "flat"


@dataclass(frozen=True)
class LocalBinary:
    policy: Policy
    target_node_id: str

    @property
    def name(self) -> str:
        return Policy(self.policy).value


@dataclass(frozen=True)
class Global:
    name = "global"


Strategy = Flat | LocalBinary | Global


def parse_strategy(name: str, node_id: str = "1.1.1") -> Strategy:
    if name == "flat":
        return Flat()
    if name in ("inclusive", "sibling"):
        return LocalBinary(Policy(name), node_id)
    if name == "global":
        return Global()
    raise ConfigError(f"unknown strategy {name!r}; expected flat, inclusive or sibling")


def negative_label(positive: str) -> str:
    return f"non-{positive}"


def _codes_of(labels) -> list[str]:
    return [getattr(lb, "class_code", lb) for lb in labels]


def policy_codes(tree: TaxonomyTree, node_id: str, policy: Policy) -> tuple[frozenset[str], frozenset[str] | None]:
    """Positive code set and negative code set (``None`` meaning "everything else")."""
    pos = descendants(tree, node_id)
    if Policy(policy) is Policy.INCLUSIVE:
        return pos, None
    return pos, siblings_under(tree, node_id)


def training_indices(tree: TaxonomyTree, labels, node_id: str, policy: Policy) -> tuple[np.ndarray, np.ndarray]:
    pos_codes, neg_codes = policy_codes(tree, node_id, policy)
    codes = _codes_of(labels)
    pos = np.array([i for i, c in enumerate(codes) if c in pos_codes], dtype=np.int64)
    if neg_codes is None:
        neg = np.array([i for i, c in enumerate(codes) if c not in pos_codes], dtype=np.int64)
    else:
        neg = np.array([i for i, c in enumerate(codes) if c in neg_codes], dtype=np.int64)
    if pos.size == 0:
        raise NoPositives(f"no training labels fall under node {node_id!r}")
    if neg.size == 0:
        raise NoNegatives(f"no {Policy(policy).value} negatives for node {node_id!r}")
    return pos, neg


def assemble_training_set(tree: TaxonomyTree, labels: Sequence, node_id: str, policy: Policy):
    pos, neg = training_indices(tree, labels, node_id, policy)
    labels = list(labels)
    return [labels[i] for i in pos], [labels[i] for i in neg]


@dataclass
class NodeClassifier:
    node_id: str
    label: str
    model: LinearModel
    policy: Policy
    positive_codes: frozenset[str]
    negative_codes: frozenset[str]
    cv: CVResult | None = None

    def predict(self, X) -> list[str]:
        dv = self.model.decision_values(np.atleast_2d(X))
        neg = negative_label(self.label)
        return [self.label if v >= 0 else neg for v in dv]


@dataclass
class TrainedClassifier:
    strategy: Strategy
    flat_models: list[LinearModel] = field(default_factory=list)
    nodes: dict[str, NodeClassifier] = field(default_factory=dict)
    cv: CVResult | None = None
    skipped: dict[str, str] = field(default_factory=dict)
    dim: int = 0

    @property
    def target(self) -> NodeClassifier | None:
        if isinstance(self.strategy, LocalBinary):
            return self.nodes.get(self.strategy.target_node_id)
        return None


def _choose_c(X, y, cfg: TrainConfig) -> tuple[float, CVResult | None]:
    try:
        cv = cross_validate(X, y, cfg)
    except InsufficientSamplesForFolds as exc:
        if len(cfg.c_grid) > 1:
            raise
        log.info("skipping cross-validation: %s", exc)
        return cfg.c_grid[0], None
    return cv.best_c, cv


def train_node(tree, X, labels, node_id: str, policy: Policy, cfg: TrainConfig) -> NodeClassifier:
    pos, neg = training_indices(tree, labels, node_id, policy)
    idx = np.concatenate([pos, neg])
    y = np.concatenate([np.ones(pos.size), -np.ones(neg.size)])
    order = np.argsort(idx, kind="stable")  # keep training rows in dataset order
    idx, y = idx[order], y[order]
    Xn = X[idx]
    serial = TrainConfig(**{**cfg.__dict__, "workers": 1})
    c, cv = _choose_c(Xn, y, serial)
    label = tree.label_for(node_id)
    model = train_binary(Xn, y, c, serial, positive_label=label)
    codes = _codes_of(labels)
    return NodeClassifier(
        node_id=node_id,
        label=label,
        model=model,
        policy=Policy(policy),
        positive_codes=frozenset(codes[i] for i in pos),
        negative_codes=frozenset(codes[i] for i in neg),
        cv=cv,
    )


def train(
    strategy: Strategy,
    X,
    labels: Sequence,
    tree: TaxonomyTree | None = None,
    cfg: TrainConfig | None = None,
    all_nodes: bool = False,
) -> TrainedClassifier:
    """Train under ``strategy`` on feature rows ``X`` aligned with ``labels``.

    Cross-validation for C only ever sees the data passed in here.
    """
    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != len(labels):
        raise DimensionMismatch(f"{X.shape} feature matrix for {len(labels)} labels")

    if isinstance(strategy, Global):
        raise UnsupportedStrategy("global classification is not supported")

    if isinstance(strategy, Flat):
        codes = _codes_of(labels)
        c, cv = _choose_c(X, codes, cfg)
        models = train_one_vs_all(X, codes, c, cfg)
        return TrainedClassifier(strategy=strategy, flat_models=models, cv=cv, dim=X.shape[1])

    if not isinstance(strategy, LocalBinary):
        raise UnsupportedStrategy(f"unknown strategy {strategy!r}")
    if tree is None:
        raise ConfigError("local binary strategies need a taxonomy")
    tree.node(strategy.target_node_id)

    policy = Policy(strategy.policy)
    out = TrainedClassifier(strategy=strategy, dim=X.shape[1])
    out.nodes[strategy.target_node_id] = train_node(tree, X, labels, strategy.target_node_id, policy, cfg)
    if all_nodes:
        others = [n.node_id for n in tree.walk() if n.node_id != strategy.target_node_id]

        def fit(node_id):
            try:
                return node_id, train_node(tree, X, labels, node_id, policy, cfg), None
            except BenthoscanError as exc:
                return node_id, None, f"{type(exc).__name__}: {exc}"

        for node_id, nc, reason in _pmap(fit, others, cfg.workers):
            if nc is None:
                log.info("skipping node %s: %s", node_id, reason)
                out.skipped[node_id] = reason
            else:
                out.nodes[node_id] = nc
    return out


def predict_batch(classifier: TrainedClassifier, X) -> list[str]:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != classifier.dim:
        raise DimensionMismatch(f"classifier expects {classifier.dim}-d features, got {X.shape[1]}")
    if isinstance(classifier.strategy, Flat):
        return predict_multiclass_batch(classifier.flat_models, X)
    return classifier.target.predict(X)


def predict(classifier: TrainedClassifier, feature) -> str:
    """Class code (flat) or node label / ``non-<label>`` (local binary); a zero decision value counts as positive."""
    x = np.asarray(getattr(feature, "values", feature), dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch(f"expected a single feature vector, got shape {x.shape}")
    return predict_batch(classifier, x[None, :])[0]


def in_node(tree: TaxonomyTree, node_id: str, codes: Sequence[str]) -> list[bool]:
    members = descendants(tree, node_id)
    return [c in members for c in codes]
