"""End-to-end run: ingest, features, split, train, evaluate, cover, report."""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import coverage as cov
from .errors import BenthoscanError, ConfigError, DataError
from .features import cache_features, feature_matrix, make_backend
from .hierclass import (
    Flat,
    NodeClassifier,
    Policy,
    TrainedClassifier,
    in_node,
    negative_label,
    parse_strategy,
    predict_batch,
    train,
)
from .ingest import Dataset, parse_manifest, parse_split, split
from .metrics import TABLE_COLUMNS, MetricsReport, evaluate
from .svm import TrainConfig, model_from_dict, model_to_dict
from .taxonomy import KELP_NODE, load_taxonomy

log = logging.getLogger(__name__)

RESOLVED_CONFIG = "resolved_config.json"
HASH_MANIFEST = "MANIFEST.sha256"
COVER_COLUMNS = ("Site", "Depth and Location", "Expert Identified (%)", "Estimated (%)", "R²")


@dataclass
class RunConfig:
    images: str = ""
    labels: str = ""
    taxonomy: str = ""
    out: str = "out"
    model: str | None = None
    backend: str = "stub"
    cache: str | None = None
    strategy: str = "sibling"
    node: str = KELP_NODE
    split: str = "years:2010,2011,2012/2013"
    c_grid: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0)
    folds: int = 3
    seed: int = 0
    workers: int = 1
    tolerance: float = 1e-4
    max_iterations: int = 1000
    class_weighting: str = "none"
    all_nodes: bool = False
    stretch: bool = True

    def resolved_cache(self) -> str:
        return os.environ.get("BENTHOSCAN_CACHE") or self.cache or str(Path(self.out) / "features.bsfc")

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            c_grid=tuple(self.c_grid), folds=self.folds, tolerance=self.tolerance,
            max_iterations=self.max_iterations, seed=self.seed,
            class_weighting=self.class_weighting, workers=self.workers,
        )

    def validate(self) -> None:
        for name in ("images", "labels", "taxonomy"):
            value = getattr(self, name)
            if not value:
                raise ConfigError(f"--{name} is required")
            if not Path(value).is_file():
                raise ConfigError(f"{name} file {value} does not exist")
        if self.backend == "residual" and not (self.model and Path(self.model).is_file()):
            raise ConfigError("the residual backend needs an existing --model file")
        if self.workers < 1:
            raise ConfigError("--workers must be at least 1")
        parse_strategy(self.strategy, self.node)
        parse_split(self.split)
        self.train_config()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["c_grid"] = list(self.c_grid)
        d["cache"] = self.resolved_cache()
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        if "c_grid" in known:
            known["c_grid"] = tuple(float(c) for c in known["c_grid"])
        return cls(**known)


class StageError(Exception):
    def __init__(self, stage: str, error: BenthoscanError):
        super().__init__(f"[{stage}] {type(error).__name__}: {error}")
        self.stage = stage
        self.error = error
        self.exit_code = error.exit_code


@contextlib.contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except BenthoscanError as exc:
        raise StageError(name, exc) from exc


# --- small file helpers ---------------------------------------------------------

def write_json(doc, path: str | Path) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def write_csv(path: str | Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def record_config(out_dir: str | Path, command: str, config: dict) -> None:
    """Merge this command's resolved settings into ``resolved_config.json``."""
    path = Path(out_dir) / RESOLVED_CONFIG
    doc = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
    doc[command] = config
    write_json(doc, path)


def write_hash_manifest(out_dir: str | Path) -> Path:
    out = Path(out_dir)
    lines = []
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != HASH_MANIFEST:
            digest = hashlib.sha256(p.read_bytes()).hexdigest()
            lines.append(f"{digest}  {p.relative_to(out).as_posix()}")
    target = out / HASH_MANIFEST
    target.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return target


def created_at() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    stamp = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return stamp.replace(microsecond=0).isoformat()


# --- classifier files -----------------------------------------------------------

def classifier_to_dict(clf: TrainedClassifier, backend_id: str, cfg: TrainConfig | None = None) -> dict:
    doc = {
        "format": "benthoscan-model",
        "version": 1,
        "strategy": clf.strategy.name,
        "node": getattr(clf.strategy, "target_node_id", None),
        "dim": clf.dim,
        "backend_id": backend_id,
        "created_at": created_at(),
        "train_config": ({**cfg.__dict__, "c_grid": list(cfg.c_grid)} if cfg else None),
        "cv": clf.cv.summary() if clf.cv else None,
        "models": [],
        "nodes": [],
        "skipped_nodes": clf.skipped,
    }
    for m in clf.flat_models:
        m.backend_id = backend_id
        doc["models"].append(model_to_dict(m))
    for node_id, nc in clf.nodes.items():
        nc.model.backend_id = backend_id
        doc["nodes"].append({
            "node_id": node_id,
            "label": nc.label,
            "policy": nc.policy.value,
            "positive_codes": sorted(nc.positive_codes),
            "negative_codes": sorted(nc.negative_codes),
            "cv": nc.cv.summary() if nc.cv else None,
            "model": model_to_dict(nc.model),
        })
    return doc


def classifier_from_dict(doc: dict) -> tuple[TrainedClassifier, str]:
    if doc.get("format") != "benthoscan-model":
        raise DataError("not a benthoscan model file")
    strategy = parse_strategy(doc["strategy"], doc.get("node") or KELP_NODE)
    clf = TrainedClassifier(strategy=strategy, dim=int(doc["dim"]), skipped=dict(doc.get("skipped_nodes", {})))
    clf.flat_models = [model_from_dict(m) for m in doc.get("models", [])]
    for entry in doc.get("nodes", []):
        clf.nodes[entry["node_id"]] = NodeClassifier(
            node_id=entry["node_id"],
            label=entry["label"],
            model=model_from_dict(entry["model"]),
            policy=Policy(entry["policy"]),
            positive_codes=frozenset(entry["positive_codes"]),
            negative_codes=frozenset(entry["negative_codes"]),
        )
    return clf, doc.get("backend_id", "")


def load_classifier(path: str | Path) -> tuple[TrainedClassifier, str]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"model file {path} not found") from None
    return classifier_from_dict(doc)


# --- stages ----------------------------------------------------------------------

def ingest(images: str, labels: str, taxonomy: str | None) -> Dataset:
    tree = load_taxonomy(taxonomy) if taxonomy else load_taxonomy()
    ims, lbs = parse_manifest(images, labels, tree)
    return Dataset(ims, lbs, tree)


@dataclass
class Evaluation:
    report: MetricsReport
    predictions: list[str]
    truth: list[str]
    truth_in_node: list[bool]
    pred_in_node: list[bool]
    kelp_label: str


def evaluate_classifier(clf: TrainedClassifier, X, dataset: Dataset, node_id: str) -> Evaluation:
    """Predict every point of ``dataset`` and score it the way the strategy is reported.

    Flat runs are scored over all class codes, with kelp precision/recall
    taken from the in-node vs out-of-node view; local binary runs are scored
    as a two-class problem over every test point.
    """
    tree = dataset.taxonomy
    codes = [lb.class_code for lb in dataset.labels]
    preds = predict_batch(clf, X)
    label = tree.label_for(node_id)
    truth_in = in_node(tree, node_id, codes)
    if isinstance(clf.strategy, Flat):
        pred_in = in_node(tree, node_id, preds)
        report = evaluate(preds, codes)
        binary = evaluate(
            [label if p else negative_label(label) for p in pred_in],
            [label if t else negative_label(label) for t in truth_in],
            kelp_label=label,
        )
        report.kelp_label = label
        report.kelp_precision = binary.kelp_precision
        report.kelp_recall = binary.kelp_recall
        truth = codes
    else:
        pred_in = [p == label for p in preds]
        truth = [label if t else negative_label(label) for t in truth_in]
        report = evaluate(preds, truth, classes=[label, negative_label(label)], kelp_label=label)
    return Evaluation(report, preds, truth, truth_in, pred_in, label)


def prediction_rows(dataset: Dataset, ev: Evaluation) -> list[list]:
    index = dataset.image_index()
    rows = []
    for lb, pred, t_in, p_in in zip(dataset.labels, ev.predictions, ev.truth_in_node, ev.pred_in_node):
        im = index[lb.image_id]
        rows.append([lb.image_id, im.site_id, im.year, lb.x_px, lb.y_px, lb.class_code, pred, int(t_in), int(p_in)])
    return rows


PREDICTION_COLUMNS = (
    "image_id", "site", "year", "x_px", "y_px", "truth_code", "predicted", "truth_in_node", "predicted_in_node",
)


def read_predictions(path: str | Path):
    truth: dict[str, list[bool]] = {}
    pred: dict[str, list[bool]] = {}
    meta: dict[str, tuple[str, int]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            iid = row["image_id"]
            truth.setdefault(iid, []).append(row["truth_in_node"] == "1")
            pred.setdefault(iid, []).append(row["predicted_in_node"] == "1")
            meta[iid] = (row["site"], int(row["year"]))
    return pred, truth, meta


def method_name(strategy_name: str, backend_id: str) -> str:
    feature = "DRF" if backend_id.startswith("residual") else "STUB"
    return f"{feature}: {strategy_name.capitalize()}"


def metrics_table_row(method: str, report: MetricsReport, cv_doc: dict | None) -> dict:
    row = {"Method": method, **report.table_row()}
    if cv_doc:
        best = next(p for p in cv_doc["per_c"] if p["c"] == cv_doc["best_c"])
        row["CV mean f1 (mean ± sd over folds)"] = f"{best['mean_f1']:.4f} ± {best['std_f1']:.4f}"
        row["C"] = cv_doc["best_c"]
    return row


def cover_summary(records, depth_by_site: dict[str, float] | None = None):
    """Site/year tables and regression fits for a set of coverage records.

    Returns ``(summary, fits, overall_fit)``; ``overall_fit`` is None when
    the records cannot support a regression.
    """
    fits: dict = {}
    try:
        overall = cov.fit_ols(records)
        fits["all"] = overall.to_dict()
    except DataError as exc:
        overall = None
        fits["all"] = {"error": f"{type(exc).__name__}: {exc}"}

    site_rows = []
    for g in cov.aggregate(records, "site"):
        site = g.key[0]
        try:
            site_fit = cov.fit_ols([r for r in records if r.site_id == site])
            fits[f"site:{site}"] = site_fit.to_dict()
            r2 = site_fit.r_squared
        except DataError:
            r2 = None
        depth = (depth_by_site or {}).get(site)
        site_rows.append({
            "Site": site,
            "Depth and Location": f"{depth:g}m" if depth is not None else "",
            "Expert Identified (%)": round(g.expert_mean, 2),
            "Estimated (%)": round(g.estimated_mean, 2),
            "R²": None if r2 is None else round(r2, 2),
            "n_images": g.n_images,
        })
    summary = {
        "n_images": len(records),
        "by_site": site_rows,
        "by_year": [
            {"year": g.key[0], "n_images": g.n_images, "expert_mean": g.expert_mean, "estimated_mean": g.estimated_mean}
            for g in cov.aggregate(records, "year")
        ],
        "by_site_year": [
            {"site": g.key[0], "year": g.key[1], "n_images": g.n_images,
             "expert_mean": g.expert_mean, "estimated_mean": g.estimated_mean}
            for g in cov.aggregate(records, "site_year")
        ],
        "fit_all": fits["all"] if overall is None else
        {k: fits["all"][k] for k in ("slope", "intercept", "r_squared", "n")},
    }
    return summary, fits, overall


def _cells(rows: list[dict], columns) -> list[list]:
    return [["" if r[c] is None else r[c] for c in columns] for r in rows]


def cover_outputs(records, out_dir: Path, depth_by_site: dict[str, float] | None = None) -> dict:
    """Write coverage.csv, fit.json, cover_by_site.csv and scatter.svg; return the summary."""
    summary, fits, overall = cover_summary(records, depth_by_site)
    cov.write_coverage_csv(records, out_dir / "coverage.csv")
    write_json(fits, out_dir / "fit.json")
    write_csv(out_dir / "cover_by_site.csv", COVER_COLUMNS, _cells(summary["by_site"], COVER_COLUMNS))
    (out_dir / "scatter.svg").write_text(cov.scatter_svg(records, overall, "all test images"), encoding="utf-8")
    return summary


def write_report(out_dir: Path, classification_rows: list[dict], cover_summary: dict | None) -> dict:
    """``report.json`` plus CSV tables laid out like the classification and site cover tables."""
    report = {
        "classification": {"columns": ["Method", *TABLE_COLUMNS], "rows": classification_rows},
        "coverage": None,
    }
    if cover_summary is not None:
        report["coverage"] = {"columns": list(COVER_COLUMNS), **cover_summary}
    write_json(report, out_dir / "report.json")
    write_csv(
        out_dir / "report_classification.csv",
        ["Method", *TABLE_COLUMNS],
        _cells(classification_rows, ["Method", *TABLE_COLUMNS]),
    )
    if cover_summary is not None:
        write_csv(
            out_dir / "report_coverage.csv",
            COVER_COLUMNS,
            _cells(cover_summary["by_site"], COVER_COLUMNS),
        )
    return report


@dataclass
class RunResult:
    out_dir: Path
    report: dict
    timings: dict = field(default_factory=dict)


def run_pipeline(config: RunConfig) -> RunResult:
    with stage("config"):
        config.validate()
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    record_config(out, "run", config.to_dict())
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    with stage("ingest"):
        dataset = ingest(config.images, config.labels, config.taxonomy)
        config.train_config()
    timings["ingest_s"] = time.perf_counter() - t0

    with stage("extract"):
        backend = make_backend(config.backend, config.model)
        run = cache_features(dataset, backend, config.resolved_cache(), workers=config.workers, stretch=config.stretch)
    timings["extract_s"] = run.seconds
    timings["images_per_hour"] = run.images_per_hour if run.n_images_processed else None
    timings["new_vectors"] = run.n_new

    with stage("split"):
        train_set, test_set = split(dataset, parse_split(config.split))
        if not train_set.labels or not test_set.labels:
            raise DataError(f"split {config.split} leaves an empty train or test set")
        X_train = feature_matrix(run.store, train_set.labels, backend.backend_id)
        X_test = feature_matrix(run.store, test_set.labels, backend.backend_id)

    t0 = time.perf_counter()
    with stage("train"):
        cfg = config.train_config()
        strategy = parse_strategy(config.strategy, config.node)
        clf = train(strategy, X_train, train_set.labels, dataset.taxonomy, cfg, all_nodes=config.all_nodes)
        model_doc = classifier_to_dict(clf, backend.backend_id, cfg)
        write_json(model_doc, out / "model.json")
    timings["train_s"] = time.perf_counter() - t0

    with stage("evaluate"):
        ev = evaluate_classifier(clf, X_test, test_set, config.node)
        write_json(ev.report.to_dict(), out / "metrics.json")
        write_csv(out / "predictions.csv", PREDICTION_COLUMNS, prediction_rows(test_set, ev))
        cv_doc = model_doc["cv"] if isinstance(strategy, Flat) else model_doc["nodes"][0]["cv"]
        row = metrics_table_row(method_name(strategy.name, backend.backend_id), ev.report, cv_doc)

    with stage("cover"):
        index = test_set.image_index()
        pred, truth, meta = {}, {}, {}
        for lb, t_in, p_in in zip(test_set.labels, ev.truth_in_node, ev.pred_in_node):
            truth.setdefault(lb.image_id, []).append(t_in)
            pred.setdefault(lb.image_id, []).append(p_in)
            meta[lb.image_id] = (index[lb.image_id].site_id, index[lb.image_id].year)
        records = cov.estimate_cover(pred, truth, meta)
        depths = {im.site_id: im.depth_m for im in test_set.images}
        cover_summary = cover_outputs(records, out, depths)

    with stage("report"):
        report = write_report(out, [row], cover_summary)
        write_json({k: (round(v, 3) if isinstance(v, float) else v) for k, v in timings.items()}, out / "timing.json")
        write_hash_manifest(out)
    return RunResult(out, report, timings)
