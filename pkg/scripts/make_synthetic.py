"""Regenerate the bundled 20-image synthetic survey (5 sites x 2010-2013)."""

import argparse
import shutil

from benthoscan.synthetic import bundled_synthetic_dir, write_synthetic_dataset

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--out", default=None, help="target directory (default: the bundled copy)")
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()

out = args.out or bundled_synthetic_dir()
if args.out is None:
    shutil.rmtree(out, ignore_errors=True)
write_synthetic_dataset(out, seed=args.seed)
print(f"wrote synthetic survey to {out}")
