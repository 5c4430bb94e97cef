import json

import numpy as np
import pytest

from benthoscan import rottnest
from benthoscan.cli import main
from benthoscan.coverage import estimate_cover, write_coverage_csv
from benthoscan.features import make_backend
from benthoscan.hierclass import LocalBinary, NodeClassifier, Policy, TrainedClassifier
from benthoscan.pipeline import classifier_to_dict, write_json
from benthoscan.svm import LinearModel
from benthoscan.synthetic import site_cover_points


def manifest_args(d):
    return ["--images", str(d / "images.csv"), "--labels", str(d / "labels.csv"), "--taxonomy", str(d / "taxonomy.json")]


@pytest.fixture
def run_dir(synthetic_dir, tmp_path):
    out = tmp_path / "run"
    assert main(["run", *manifest_args(synthetic_dir), "--out", str(out)]) == 0
    return out


def test_run_writes_every_artifact(run_dir):
    for name in ("model.json", "metrics.json", "predictions.csv", "coverage.csv", "fit.json", "scatter.svg",
                 "report.json", "report_classification.csv", "report_coverage.csv", "resolved_config.json",
                 "timing.json", "MANIFEST.sha256", "features.bsfc"):
        assert (run_dir / name).is_file(), name
    report = json.loads((run_dir / "report.json").read_text())
    (row,) = report["classification"]["rows"]
    assert row["Method"] == "STUB: Sibling"
    assert row["Recall of Kelps (%)"] == 100.0
    manifest = (run_dir / "MANIFEST.sha256").read_text().splitlines()
    assert any(line.endswith("  report.json") for line in manifest)
    assert json.loads((run_dir / "resolved_config.json").read_text())["run"]["strategy"] == "sibling"


def test_report_is_byte_identical_across_runs(synthetic_dir, tmp_path, run_dir):
    again = tmp_path / "again"
    assert main(["run", *manifest_args(synthetic_dir), "--out", str(again)]) == 0
    for name in ("report.json", "metrics.json", "predictions.csv", "coverage.csv"):
        assert (run_dir / name).read_bytes() == (again / name).read_bytes(), name


def test_missing_taxonomy_is_a_config_error(synthetic_dir, tmp_path, capsys):
    args = manifest_args(synthetic_dir)
    args[-1] = str(tmp_path / "nowhere.json")
    assert main(["run", *args, "--out", str(tmp_path / "o")]) == 2
    assert "config" in capsys.readouterr().err


def test_stage_commands_chain(synthetic_dir, tmp_path):
    ds = tmp_path / "dataset.json"
    cache = tmp_path / "features.bsfc"
    assert main(["ingest", *manifest_args(synthetic_dir), "--out", str(ds)]) == 0
    assert main(["extract", "--dataset", str(ds), "--cache", str(cache)]) == 0
    model = tmp_path / "train" / "model.json"
    assert main(["train", "--dataset", str(ds), "--features", str(cache), "--strategy", "sibling",
                 "--node", "1.1.1", "--split", "years:2010,2011,2012/2013", "--out", str(model)]) == 0
    doc = json.loads(model.read_text())
    assert doc["strategy"] == "sibling" and doc["node"] == "1.1.1" and doc["dim"] == 2048
    ev = tmp_path / "eval"
    assert main(["evaluate", "--dataset", str(ds), "--features", str(cache), "--model-file", str(model),
                 "--split", "years:2010,2011,2012/2013", "--out", str(ev)]) == 0
    assert json.loads((ev / "metrics.json").read_text())["kelp_recall"] == 1.0
    cov = tmp_path / "cover"
    assert main(["cover", "--predictions", str(ev / "predictions.csv"), "--out", str(cov)]) == 0
    assert (cov / "coverage.csv").is_file() and (cov / "scatter.svg").is_file()


def test_evaluate_with_wrong_dimension_is_a_data_error(synthetic_dir, tmp_path):
    ds = tmp_path / "dataset.json"
    cache = tmp_path / "features.bsfc"
    assert main(["ingest", *manifest_args(synthetic_dir), "--out", str(ds)]) == 0
    assert main(["extract", "--dataset", str(ds), "--cache", str(cache)]) == 0
    node = NodeClassifier("1.1.1", "MAECK", LinearModel(np.ones(16), 0.0, "MAECK", 1.0), Policy.SIBLING,
                          frozenset({"MAECK"}), frozenset({"MAENR"}))
    clf = TrainedClassifier(LocalBinary(Policy.SIBLING, "1.1.1"), nodes={"1.1.1": node}, dim=16)
    model = tmp_path / "small.json"
    write_json(classifier_to_dict(clf, make_backend("stub").backend_id), model)
    assert main(["evaluate", "--dataset", str(ds), "--features", str(cache), "--model-file", str(model),
                 "--out", str(tmp_path / "ev")]) == 3


def test_report_reproduces_the_site_cover_table(tmp_path):
    records = estimate_cover(*site_cover_points(seed=0))
    write_coverage_csv(records, tmp_path / "coverage.csv")
    out = tmp_path / "report"
    assert main(["report", "--coverage", str(tmp_path / "coverage.csv"), "--out", str(out)]) == 0
    first = (out / "report.json").read_bytes()
    rows = json.loads(first)["coverage"]["by_site"]
    assert len(rows) == 5
    for row in rows:
        _, expert, estimated, _ = rottnest.SITE_COVER_2013[row["Site"]]
        assert (row["Expert Identified (%)"], row["Estimated (%)"]) == (expert, estimated)
    # running the same report again changes nothing
    assert main(["report", "--coverage", str(tmp_path / "coverage.csv"), "--out", str(out)]) == 0
    assert (out / "report.json").read_bytes() == first


def test_report_with_missing_inputs(tmp_path):
    assert main(["report", "--coverage", str(tmp_path / "none.csv"), "--out", str(tmp_path / "r")]) == 2
    assert main(["report", "--metrics", str(tmp_path / "none.json"), "--out", str(tmp_path / "r")]) == 2


def test_train_without_cache_is_a_config_error(synthetic_dir, tmp_path, monkeypatch):
    monkeypatch.delenv("BENTHOSCAN_CACHE", raising=False)
    assert main(["train", *manifest_args(synthetic_dir), "--features", str(tmp_path / "none.bsfc"),
                 "--out", str(tmp_path / "m.json")]) == 2
