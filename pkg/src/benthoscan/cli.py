"""``benthoscan`` command line.

Exit codes: 0 success, 2 configuration error, 3 data or dimension error,
4 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from . import coverage as cov
from .errors import BenthoscanError, ConfigError, DataError
from .features import FeatureStore, cache_features, feature_matrix, make_backend
from .hierclass import parse_strategy, train
from .ingest import Dataset, load_dataset, parse_split, save_dataset, split, summarize
from .pipeline import (
    PREDICTION_COLUMNS,
    RunConfig,
    StageError,
    classifier_to_dict,
    cover_outputs,
    cover_summary,
    evaluate_classifier,
    ingest,
    load_classifier,
    method_name,
    metrics_table_row,
    prediction_rows,
    read_predictions,
    record_config,
    run_pipeline,
    write_csv,
    write_hash_manifest,
    write_json,
    write_report,
)
from .svm import TrainConfig
from .taxonomy import KELP_NODE

log = logging.getLogger("benthoscan")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_dataset_args(p: argparse.ArgumentParser, required: bool = False) -> None:
    p.add_argument("--dataset", help="dataset file written by `benthoscan ingest`")
    p.add_argument("--images", help="images.csv manifest")
    p.add_argument("--labels", help="labels.csv manifest")
    p.add_argument("--taxonomy", help="taxonomy JSON (default: bundled CATAMI/Rottnest tree)")


def _add_backend_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=("residual", "stub"), default="stub")
    p.add_argument("--model", help="ONNX residual network (residual backend)")


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--strategy", choices=("flat", "inclusive", "sibling"), default="sibling")
    p.add_argument("--node", default=KELP_NODE, help="target taxonomy node for local binary strategies")
    p.add_argument("--c-grid", type=_floats, default=(0.01, 0.1, 1.0, 10.0))
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--max-iterations", type=int, default=1000)
    p.add_argument("--class-weighting", choices=("none", "inverse-frequency"), default="none")
    p.add_argument("--all-nodes", action="store_true", help="also train a classifier for every other node")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="benthoscan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate manifests and write a dataset file")
    _add_dataset_args(p)
    p.add_argument("--out", required=True, help="dataset file to write (e.g. dataset.bin)")

    p = sub.add_parser("extract", help="compute and cache patch features")
    _add_dataset_args(p)
    _add_backend_args(p)
    p.add_argument("--cache", help="feature cache file (env BENTHOSCAN_CACHE overrides)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-stretch", action="store_true", help="skip the colour channel stretch")

    p = sub.add_parser("train", help="train a classifier on cached features")
    _add_dataset_args(p)
    _add_backend_args(p)
    _add_train_args(p)
    p.add_argument("--features", help="feature cache file (env BENTHOSCAN_CACHE overrides)")
    p.add_argument("--split", help="train on the training side of this split only")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="model JSON to write")

    p = sub.add_parser("evaluate", help="score a trained model")
    _add_dataset_args(p)
    p.add_argument("--model-file", "--classifier", dest="model_file", required=True, help="model JSON from `train`")
    p.add_argument("--features", help="feature cache file (env BENTHOSCAN_CACHE overrides)")
    p.add_argument("--split", help="evaluate on the test side of this split (default: all points)")
    p.add_argument("--node", default=None, help="node scored as kelp (default: the model's node or 1.1.1)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("cover", help="estimate per-image cover and fit expert vs estimated")
    p.add_argument("--predictions", required=True, help="predictions.csv from `evaluate`")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("report", help="merge metrics and coverage into one summary")
    p.add_argument("--metrics", nargs="*", default=[], help="metrics.json files from `evaluate`")
    p.add_argument("--coverage", help="coverage.csv from `cover`")
    p.add_argument("--dataset", help="dataset file, for site depths")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("run", help="run the whole pipeline")
    p.add_argument("--config", help="RunConfig JSON; flags given explicitly override it")
    _add_dataset_args(p)
    _add_backend_args(p)
    _add_train_args(p)
    p.add_argument("--cache")
    p.add_argument("--split", default="years:2010,2011,2012/2013")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-stretch", action="store_true")
    p.add_argument("--out", default=None)
    return parser


# --- helpers ---------------------------------------------------------------------

def _dataset_from_args(args) -> Dataset:
    if getattr(args, "dataset", None):
        ds = load_dataset(args.dataset)
        if ds.taxonomy is None:
            from .taxonomy import load_taxonomy

            ds.taxonomy = load_taxonomy(args.taxonomy) if args.taxonomy else load_taxonomy()
        return ds
    if not (args.images and args.labels):
        raise ConfigError("give --dataset, or --images and --labels")
    for name in ("images", "labels", "taxonomy"):
        value = getattr(args, name, None)
        if value and not Path(value).is_file():
            raise ConfigError(f"{name} file {value} does not exist")
    return ingest(args.images, args.labels, args.taxonomy)


def _cache_path(args, attr: str) -> str:
    path = os.environ.get("BENTHOSCAN_CACHE") or getattr(args, attr, None)
    if not path:
        raise ConfigError(f"--{attr} (or BENTHOSCAN_CACHE) is required")
    return path


def _store_backend_id(store: FeatureStore, wanted: str | None) -> str:
    ids = sorted({k[3] for k in store.keys()})
    if wanted:
        if wanted not in ids:
            raise DataError(f"feature cache has no vectors for backend {wanted!r}")
        return wanted
    if len(ids) != 1:
        raise ConfigError(f"feature cache holds backends {ids}; pick one with --backend/--model")
    return ids[0]


def _open_store(path: str) -> FeatureStore:
    if not Path(path).is_file():
        raise ConfigError(f"feature cache {path} does not exist; run `benthoscan extract` first")
    return FeatureStore(path)


# --- commands --------------------------------------------------------------------

def cmd_ingest(args) -> int:
    ds = _dataset_from_args(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    s = summarize(ds.labels)
    print(json.dumps({"images": len(ds.images), "points": s.n_points, "classes": len(s.counts)}))
    return 0


def cmd_extract(args) -> int:
    ds = _dataset_from_args(args)
    backend = make_backend(args.backend, args.model)
    run = cache_features(ds, backend, _cache_path(args, "cache"), workers=args.workers, stretch=not args.no_stretch)
    print(json.dumps({
        "backend_id": backend.backend_id,
        "new_vectors": run.n_new,
        "cached_vectors": len(run.store),
        "images_processed": run.n_images_processed,
        "images_per_hour": round(run.images_per_hour, 1) if run.n_images_processed else None,
    }))
    return 0


def cmd_train(args) -> int:
    ds = _dataset_from_args(args)
    store = _open_store(_cache_path(args, "features"))
    wanted = make_backend(args.backend, args.model).backend_id if args.model or args.backend == "residual" else None
    backend_id = _store_backend_id(store, wanted)
    train_set = split(ds, parse_split(args.split))[0] if args.split else ds
    X = feature_matrix(store, train_set.labels, backend_id)
    cfg = TrainConfig(
        c_grid=args.c_grid, folds=args.folds, tolerance=args.tolerance, max_iterations=args.max_iterations,
        seed=args.seed, class_weighting=args.class_weighting, workers=args.workers,
    )
    clf = train(parse_strategy(args.strategy, args.node), X, train_set.labels, ds.taxonomy, cfg, all_nodes=args.all_nodes)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_json(classifier_to_dict(clf, backend_id, cfg), out)
    record_config(out.parent, "train", {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items() if k != "func"})
    write_hash_manifest(out.parent)
    return 0


def cmd_evaluate(args) -> int:
    ds = _dataset_from_args(args)
    clf, backend_id = load_classifier(args.model_file)
    store = _open_store(_cache_path(args, "features"))
    test_set = split(ds, parse_split(args.split))[1] if args.split else ds
    X = feature_matrix(store, test_set.labels, _store_backend_id(store, backend_id or None))
    node = args.node or getattr(clf.strategy, "target_node_id", None) or KELP_NODE
    ev = evaluate_classifier(clf, X, test_set, node)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = ev.report.to_dict()
    doc["table_row"] = metrics_table_row(method_name(clf.strategy.name, backend_id), ev.report, None)
    write_json(doc, out / "metrics.json")
    write_csv(out / "predictions.csv", PREDICTION_COLUMNS, prediction_rows(test_set, ev))
    record_config(out, "evaluate", {k: v for k, v in vars(args).items() if k != "func"})
    write_hash_manifest(out)
    print(json.dumps(doc["table_row"], ensure_ascii=False))
    return 0


def cmd_cover(args) -> int:
    pred, truth, meta = read_predictions(args.predictions)
    records = cov.estimate_cover(pred, truth, meta)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = cover_outputs(records, out)
    record_config(out, "cover", {k: v for k, v in vars(args).items() if k != "func"})
    write_hash_manifest(out)
    print(json.dumps(summary["fit_all"]))
    return 0


def cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for path in args.metrics:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"metrics file {path} not found") from None
        rows.append(doc.get("table_row") or {"Method": Path(path).parent.name})
    summary = None
    if args.coverage:
        if not Path(args.coverage).is_file():
            raise ConfigError(f"coverage file {args.coverage} not found")
        records = cov.read_coverage_csv(args.coverage)
        depths = None
        if args.dataset:
            depths = {im.site_id: im.depth_m for im in load_dataset(args.dataset).images}
        summary = cover_summary(records, depths)[0]
    write_report(out, rows, summary)
    record_config(out, "report", {k: v for k, v in vars(args).items() if k != "func"})
    write_hash_manifest(out)
    return 0


def cmd_run(args) -> int:
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {args.config} not found") from None
    defaults = vars(build_parser().parse_args(["run"]))
    flags = {
        "images": args.images, "labels": args.labels, "taxonomy": args.taxonomy, "model": args.model,
        "backend": args.backend, "cache": args.cache, "strategy": args.strategy, "node": args.node,
        "split": args.split, "c_grid": args.c_grid, "folds": args.folds, "seed": args.seed,
        "workers": args.workers, "tolerance": args.tolerance, "max_iterations": args.max_iterations,
        "class_weighting": args.class_weighting, "all_nodes": args.all_nodes, "stretch": not args.no_stretch,
        "out": args.out,
    }
    merged = dict(base)
    for key, value in flags.items():
        default = (not defaults["no_stretch"]) if key == "stretch" else defaults.get(key)
        if key not in base or value != default:
            if value is not None:
                merged[key] = value
    merged.setdefault("out", "out")
    result = run_pipeline(RunConfig.from_dict(merged))
    rows = result.report["classification"]["rows"]
    print(json.dumps({"out": str(result.out_dir), "classification": rows}, ensure_ascii=False))
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "extract": cmd_extract,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "cover": cmd_cover,
    "report": cmd_report,
    "run": cmd_run,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except StageError as exc:
        print(f"benthoscan: error in stage {exc}", file=sys.stderr)
        return exc.exit_code
    except BenthoscanError as exc:
        print(f"benthoscan {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
