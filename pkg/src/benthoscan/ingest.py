"""Survey manifests: parsing, validation, train/test splits and class counts."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DuplicateImageId,
    EmptySite,
    MalformedRow,
    UnknownImageReference,
    YearNotCovered,
)
from .taxonomy import TaxonomyTree, tree_from_dict

IMAGE_COLUMNS = ("image_id", "file_path", "site_id", "year", "depth_m", "width_px", "height_px")
LABEL_COLUMNS = ("image_id", "x_px", "y_px", "class_code")
MAX_POINTS_PER_IMAGE = 50
PATCH_SIZE = 224


@dataclass(frozen=True)
class SurveyImage:
    image_id: str
    file_path: str
    site_id: str
    year: int
    depth_m: float
    width_px: int
    height_px: int


@dataclass(frozen=True)
class PointLabel:
    image_id: str
    x_px: int
    y_px: int
    class_code: str

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.image_id, self.x_px, self.y_px)


@dataclass(frozen=True)
class ByLocationFraction:
    fraction: float
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.fraction < 1:
            raise ConfigError(f"train fraction must lie in (0, 1), got {self.fraction}")


@dataclass(frozen=True)
class ByYear:
    train_years: frozenset[int]
    test_years: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "train_years", frozenset(int(y) for y in self.train_years))
        object.__setattr__(self, "test_years", frozenset(int(y) for y in self.test_years))
        overlap = self.train_years & self.test_years
        if overlap:
            raise ConfigError(f"years {sorted(overlap)} are in both train and test sets")


SplitSpec = ByLocationFraction | ByYear


def parse_split(text: str) -> SplitSpec:
    """Parse ``location:FRACTION[:SEED]`` or ``years:Y1,Y2/Y3,...``."""
    kind, _, rest = text.partition(":")
    try:
        if kind == "location":
            parts = rest.split(":")
            seed = int(parts[1]) if len(parts) > 1 and parts[1] else 0
            return ByLocationFraction(float(parts[0]), seed)
        if kind == "years":
            train, test = rest.split("/")
            return ByYear(
                frozenset(int(y) for y in train.split(",") if y),
                frozenset(int(y) for y in test.split(",") if y),
            )
    except ValueError as exc:
        raise ConfigError(f"bad split spec {text!r}: {exc}") from None
    raise ConfigError(f"bad split spec {text!r}; expected location:F:SEED or years:A,B/C")


def format_split(spec: SplitSpec) -> str:
    if isinstance(spec, ByLocationFraction):
        return f"location:{spec.fraction}:{spec.seed}"
    return "years:{}/{}".format(
        ",".join(map(str, sorted(spec.train_years))), ",".join(map(str, sorted(spec.test_years)))
    )


@dataclass
class Dataset:
    images: list[SurveyImage]
    labels: list[PointLabel]
    taxonomy: TaxonomyTree | None = field(default=None, repr=False)

    def image_index(self) -> dict[str, SurveyImage]:
        return {im.image_id: im for im in self.images}

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class DatasetSummary:
    counts: dict[str, int]
    n_images: int
    n_points: int


def _read_rows(path: Path, columns: Sequence[str]) -> Iterable[tuple[int, dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in columns if c not in header]
        if missing:
            raise MalformedRow(path, 1, f"header lacks columns {missing}")
        for row in reader:
            # DictReader puts overflow cells under the None key
            if None in row or any(row[c] is None for c in columns):
                raise MalformedRow(path, reader.line_num, "wrong number of fields")
            yield reader.line_num, row


def _as_int(path, line, row, col) -> int:
    try:
        return int(row[col])
    except ValueError:
        raise MalformedRow(path, line, f"{col}={row[col]!r} is not an integer") from None


def parse_images(path: str | Path) -> list[SurveyImage]:
    path = Path(path)
    base = path.parent
    images: list[SurveyImage] = []
    seen: set[str] = set()
    for line, row in _read_rows(path, IMAGE_COLUMNS):
        image_id = row["image_id"].strip()
        if not image_id:
            raise MalformedRow(path, line, "empty image_id")
        if image_id in seen:
            raise DuplicateImageId(f"{path}:{line}: image_id {image_id!r} repeated")
        seen.add(image_id)
        try:
            depth = float(row["depth_m"])
        except ValueError:
            raise MalformedRow(path, line, f"depth_m={row['depth_m']!r} is not a number") from None
        if not math.isfinite(depth) or depth < 0:
            raise MalformedRow(path, line, f"depth_m={depth} must be finite and non-negative")
        width = _as_int(path, line, row, "width_px")
        height = _as_int(path, line, row, "height_px")
        if width <= 0 or height <= 0:
            raise MalformedRow(path, line, "image dimensions must be positive")
        file_path = row["file_path"].strip()
        if file_path and not Path(file_path).is_absolute():
            file_path = str(base / file_path)
        images.append(SurveyImage(
            image_id=image_id,
            file_path=file_path,
            site_id=row["site_id"].strip(),
            year=_as_int(path, line, row, "year"),
            depth_m=depth,
            width_px=width,
            height_px=height,
        ))
    return images


def parse_labels(
    path: str | Path,
    images: Sequence[SurveyImage],
    taxonomy: TaxonomyTree | None = None,
) -> list[PointLabel]:
    path = Path(path)
    index = {im.image_id: im for im in images}
    per_image: Counter[str] = Counter()
    labels: list[PointLabel] = []
    for line, row in _read_rows(path, LABEL_COLUMNS):
        image_id = row["image_id"].strip()
        image = index.get(image_id)
        if image is None:
            raise UnknownImageReference(f"{path}:{line}: no image {image_id!r} in the image manifest")
        x = _as_int(path, line, row, "x_px")
        y = _as_int(path, line, row, "y_px")
        if not (0 <= x < image.width_px and 0 <= y < image.height_px):
            raise MalformedRow(
                path, line, f"point ({x}, {y}) outside {image.width_px}x{image.height_px} image {image_id!r}"
            )
        code = row["class_code"].strip()
        if not code:
            raise MalformedRow(path, line, "empty class_code")
        if taxonomy is not None and not taxonomy.has_code(code):
            raise MalformedRow(path, line, f"class code {code!r} not in taxonomy")
        per_image[image_id] += 1
        if per_image[image_id] > MAX_POINTS_PER_IMAGE:
            raise MalformedRow(path, line, f"image {image_id!r} has more than {MAX_POINTS_PER_IMAGE} points")
        labels.append(PointLabel(image_id, x, y, code))
    return labels


def parse_manifest(
    images_path: str | Path,
    labels_path: str | Path,
    taxonomy: TaxonomyTree | None = None,
) -> tuple[list[SurveyImage], list[PointLabel]]:
    """Read ``images.csv`` and ``labels.csv``; row order is preserved."""
    images = parse_images(images_path)
    return images, parse_labels(labels_path, images, taxonomy)


def _subset(dataset: Dataset, image_ids: set[str]) -> Dataset:
    return Dataset(
        images=[im for im in dataset.images if im.image_id in image_ids],
        labels=[lb for lb in dataset.labels if lb.image_id in image_ids],
        taxonomy=dataset.taxonomy,
    )


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Partition images (and with them their points) into train and test sets.

    ``ByLocationFraction`` sends floor(fraction * n) images of every site to
    the training side, chosen by a seeded shuffle; sites are visited in sorted
    order so the draw does not depend on manifest order.
    """
    if not dataset.images:
        raise DataError("cannot split an empty dataset")

    if isinstance(spec, ByYear):
        train_ids = set()
        for im in dataset.images:
            if im.year in spec.train_years:
                train_ids.add(im.image_id)
            elif im.year not in spec.test_years:
                raise YearNotCovered(f"image {im.image_id!r} has year {im.year}, in neither year set")
    elif isinstance(spec, ByLocationFraction):
        by_site: dict[str, list[str]] = {}
        for im in dataset.images:
            by_site.setdefault(im.site_id, []).append(im.image_id)
        rng = np.random.default_rng(spec.seed)
        fraction = Fraction(str(spec.fraction))
        train_ids = set()
        for site in sorted(by_site):
            ids = sorted(by_site[site])
            if len(ids) < 2:
                raise EmptySite(f"site {site!r} has {len(ids)} image(s); need at least 2 to split")
            n_train = math.floor(fraction * len(ids))
            order = rng.permutation(len(ids))
            train_ids.update(ids[i] for i in order[:n_train])
    else:
        raise ConfigError(f"unknown split spec {spec!r}")

    test_ids = {im.image_id for im in dataset.images} - train_ids
    return _subset(dataset, train_ids), _subset(dataset, test_ids)


def summarize(labels: Sequence[PointLabel], classes: Iterable[str] = ()) -> DatasetSummary:
    """Per-class point counts; codes listed in ``classes`` are reported even when absent."""
    counts = Counter(lb.class_code for lb in labels)
    for code in classes:
        counts.setdefault(code, 0)
    return DatasetSummary(
        counts=dict(sorted(counts.items())),
        n_images=len({lb.image_id for lb in labels}),
        n_points=len(labels),
    )


# dataset file written by `benthoscan ingest`: a JSON document

def save_dataset(dataset: Dataset, path: str | Path) -> None:
    doc = {
        "format": "benthoscan-dataset",
        "version": 1,
        "images": [asdict(im) for im in dataset.images],
        "labels": [[lb.image_id, lb.x_px, lb.y_px, lb.class_code] for lb in dataset.labels],
        "taxonomy": dataset.taxonomy.to_dict() if dataset.taxonomy is not None else None,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")), encoding="utf-8")


def load_dataset(path: str | Path) -> Dataset:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"dataset file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"dataset file {path} is not valid: {exc}") from None
    if doc.get("format") != "benthoscan-dataset":
        raise DataError(f"{path} is not a benthoscan dataset file")
    tax = tree_from_dict(doc["taxonomy"]) if doc.get("taxonomy") else None
    return Dataset(
        images=[SurveyImage(**im) for im in doc["images"]],
        labels=[PointLabel(a, int(b), int(c), d) for a, b, c, d in doc["labels"]],
        taxonomy=tax,
    )
