"""Run the whole pipeline on the bundled synthetic survey with each strategy.

Prints one classification row per strategy and the per-site cover table
of the last run.
"""

import argparse
import json
from pathlib import Path

from benthoscan.pipeline import RunConfig, run_pipeline
from benthoscan.synthetic import bundled_synthetic_dir

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--out", default="demo_out")
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--strategies", default="flat,inclusive,sibling")
args = parser.parse_args()

data = bundled_synthetic_dir()
cache = Path(args.out) / "features.bsfc"
result = None
for strategy in args.strategies.split(","):
    cfg = RunConfig(
        images=str(data / "images.csv"), labels=str(data / "labels.csv"), taxonomy=str(data / "taxonomy.json"),
        out=str(Path(args.out) / strategy), strategy=strategy, seed=args.seed, cache=str(cache),
    )
    result = run_pipeline(cfg)
    print(json.dumps(result.report["classification"]["rows"][0], ensure_ascii=False))

if result is not None and result.report["coverage"]:
    for row in result.report["coverage"]["by_site"]:
        print(json.dumps(row, ensure_ascii=False))
