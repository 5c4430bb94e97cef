"""Synthetic survey data and survey-shaped fixtures.

``write_synthetic_dataset`` draws a small image survey in which every class
occupies a solid-colour vertical strip 224 px wide, with points on the strip
centre line. A black/white marker strip (over 1% of pixels each) pins the
colour stretch to the identity, so every point of a class yields the same
patch and therefore the same stub feature vector.
"""

from __future__ import annotations

import csv
import shutil
from importlib import resources
from pathlib import Path

import numpy as np

from . import rottnest
from .ingest import IMAGE_COLUMNS, LABEL_COLUMNS

STRIP = 224
MARKER = 32
HEIGHT = 256
POINTS_PER_IMAGE = 50

SITES = (("S1", 15.0), ("S2", 15.0), ("S3", 25.0), ("S4", 25.0), ("S5", 40.0))
YEARS = (2010, 2011, 2012, 2013)
OTHER_CLASSES = ("MAENR", "MATM", "MASCY", "SUS", "SPC")

# 8-bit colours, kept away from 0 and 255 so the marker strip owns both tails
PALETTE = {
    "MAECK": (120, 84, 40),
    "MAENR": (150, 60, 70),
    "MATM": (90, 130, 60),
    "MASCY": (170, 140, 50),
    "SUS": (200, 190, 160),
    "SPC": (210, 120, 30),
}


def _render(classes: list[str]) -> np.ndarray:
    width = STRIP * len(classes) + MARKER
    img = np.zeros((HEIGHT, width, 3), dtype=np.uint8)
    for i, code in enumerate(classes):
        img[:, i * STRIP:(i + 1) * STRIP] = PALETTE[code]
    img[HEIGHT // 2:, -MARKER:] = 255
    return img


def write_synthetic_dataset(out_dir: str | Path, seed: int = 0) -> Path:
    """Write ``images/``, ``images.csv`` and ``labels.csv`` for 5 sites x 4 years (20 images)."""
    from PIL import Image

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    image_rows, label_rows = [], []
    n = 0
    for year in YEARS:
        for site, depth in SITES:
            # rotate the non-kelp classes so every one shows up in every year
            a = OTHER_CLASSES[n % len(OTHER_CLASSES)]
            b = OTHER_CLASSES[(n + 2) % len(OTHER_CLASSES)]
            classes = ["MAECK", a, b]
            n += 1
            image_id = f"{site}_{year}"
            pixels = _render(classes)
            rel = f"images/{image_id}.png"
            Image.fromarray(pixels).save(out / rel, optimize=False)
            image_rows.append([image_id, rel, site, year, depth, pixels.shape[1], pixels.shape[0]])

            n_kelp = int(rng.integers(3, 46))
            n_a = int(rng.integers(1, POINTS_PER_IMAGE - n_kelp))
            counts = [n_kelp, n_a, POINTS_PER_IMAGE - n_kelp - n_a]
            for strip, (code, count) in enumerate(zip(classes, counts)):
                ys = np.sort(rng.choice(HEIGHT, size=count, replace=False))
                for y in ys:
                    label_rows.append([image_id, strip * STRIP + STRIP // 2, int(y), code])

    for name, header, rows in (("images.csv", IMAGE_COLUMNS, image_rows), ("labels.csv", LABEL_COLUMNS, label_rows)):
        with open(out / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    copy_default_taxonomy(out / "taxonomy.json")
    return out


def copy_default_taxonomy(dest: str | Path) -> Path:
    src = resources.files("benthoscan.data").joinpath("catami_rottnest.json")
    with resources.as_file(src) as p:
        shutil.copyfile(p, dest)
    return Path(dest)


def bundled_synthetic_dir() -> Path:
    return Path(str(resources.files("benthoscan.data").joinpath("synthetic20")))


# --- manifest-only fixtures (no pixels) --------------------------------------

def _write_manifest(out: Path, images: list[list], labels: list[list]) -> tuple[Path, Path]:
    out.mkdir(parents=True, exist_ok=True)
    ip, lp = out / "images.csv", out / "labels.csv"
    with open(ip, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IMAGE_COLUMNS)
        w.writerows(images)
    with open(lp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_COLUMNS)
        w.writerows(labels)
    return ip, lp


def _grid_points(n: int) -> list[tuple[int, int]]:
    # 50 distinct points on a 10x5 grid inside a 1360x1024 frame
    return [(100 + 120 * (i % 10), 100 + 200 * (i // 10)) for i in range(n)]


def write_year_totals_manifest(out_dir: str | Path) -> tuple[Path, Path]:
    """Per-year image counts of the Rottnest survey, 50 points per image, sites round-robin."""
    codes = rottnest.class_codes()
    images, labels = [], []
    k = 0
    for year, (n_images, n_points) in rottnest.YEAR_TOTALS.items():
        per_image = n_points // n_images
        for i in range(n_images):
            site = str(1 + i % 5)
            image_id = f"R{year}_{i:05d}"
            images.append([image_id, "", site, year, 15.0, 1360, 1024])
            for x, y in _grid_points(per_image):
                labels.append([image_id, x, y, codes[k % len(codes)]])
                k += 1
    return _write_manifest(Path(out_dir), images, labels)


def write_class_count_manifest(out_dir: str | Path) -> tuple[Path, Path]:
    """Per-class train/test counts laid out as 50-point images (train 2010-2012, test 2013)."""
    images, labels = [], []
    for part, years in (("train", (2010, 2011, 2012)), ("test", (2013,))):
        col = 1 if part == "train" else 2
        stream = [code for entry in rottnest.CLASS_COUNTS for code in [entry[0]] * entry[col]]
        n_images = -(-len(stream) // POINTS_PER_IMAGE)
        grid = _grid_points(POINTS_PER_IMAGE)
        for i in range(n_images):
            image_id = f"{part}_{i:05d}"
            images.append([image_id, "", str(1 + i % 5), years[i % len(years)], 15.0, 1360, 1024])
            chunk = stream[i * POINTS_PER_IMAGE:(i + 1) * POINTS_PER_IMAGE]
            for (x, y), code in zip(grid, chunk):
                labels.append([image_id, x, y, code])
    return _write_manifest(Path(out_dir), images, labels)


# --- 2013 per-site cover fixture ----------------------------------------------

# images per site chosen so both cover means are exact multiples of 2%/image
SITE_COVER_IMAGES = {"1": 200, "2": 200, "3": 50, "4": 100, "5": 50}


def _spread(total: int, n: int, rng: np.random.Generator) -> list[int]:
    """``n`` per-image counts in [0, 50] summing to ``total``, drawn around the mean."""
    counts = np.full(n, total // n)
    counts[: total % n] += 1
    for _ in range(4 * n):
        i, j = rng.integers(0, n, size=2)
        step = int(rng.integers(1, 8))
        if counts[i] - step >= 0 and counts[j] + step <= POINTS_PER_IMAGE:
            counts[i] -= step
            counts[j] += step
    return counts.tolist()


def site_cover_points(seed: int = 0):
    """Truth/prediction kelp flags per image reproducing the 2013 per-site cover means.

    Returns ``(predicted, truth, meta)`` in the shape :func:`coverage.estimate_cover` takes.
    """
    rng = np.random.default_rng(seed)
    predicted, truth, meta = {}, {}, {}
    for site, (_, expert, estimated, _) in rottnest.SITE_COVER_2013.items():
        m = SITE_COVER_IMAGES[site]
        k_truth = round(expert * m / 2)
        k_pred = round(estimated * m / 2)
        t_counts = _spread(k_truth, m, rng)
        # predictions track the truth per image, then get nudged to the target total
        p_counts = np.array(t_counts)
        diff = k_pred - int(p_counts.sum())
        while diff != 0:
            i = int(rng.integers(0, m))
            step = 1 if diff > 0 else -1
            if 0 <= p_counts[i] + step <= POINTS_PER_IMAGE:
                p_counts[i] += step
                diff -= step
        for i in range(m):
            image_id = f"site{site}_{i:03d}"
            truth[image_id] = [j < t_counts[i] for j in range(POINTS_PER_IMAGE)]
            predicted[image_id] = [j < p_counts[i] for j in range(POINTS_PER_IMAGE)]
            meta[image_id] = (site, 2013)
    return predicted, truth, meta
