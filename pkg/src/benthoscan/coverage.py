"""Per-image kelp cover, expert-vs-estimated regression and site/year means."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, DegenerateX, LengthMismatch, NoLabeledPoints
from .metrics import t_ppf

COVERAGE_COLUMNS = ("image_id", "site", "year", "expert_pct", "estimated_pct", "n_points")


@dataclass(frozen=True)
class CoverageRecord:
    image_id: str
    site_id: str
    year: int
    expert_pct: float
    estimated_pct: float
    n_points: int


def estimate_cover(
    predicted: Mapping[str, Sequence[bool]],
    truth: Mapping[str, Sequence[bool]],
    meta: Mapping[str, tuple[str, int]] | None = None,
) -> list[CoverageRecord]:
    """One record per image in ``truth`` order.

    ``predicted[image_id]`` and ``truth[image_id]`` flag, for the same points,
    whether each point is kelp. ``meta`` maps image ids to (site, year).
    """
    records = []
    for image_id, t in truth.items():
        t = np.asarray(t, dtype=bool)
        if t.size == 0:
            raise NoLabeledPoints(f"image {image_id!r} has no labelled points")
        if image_id not in predicted:
            raise LengthMismatch(f"no predictions for image {image_id!r}")
        p = np.asarray(predicted[image_id], dtype=bool)
        if p.shape != t.shape:
            raise LengthMismatch(f"image {image_id!r}: {p.size} predictions for {t.size} labelled points")
        site, year = (meta or {}).get(image_id, ("", 0))
        n = int(t.size)
        records.append(CoverageRecord(
            image_id=image_id,
            site_id=str(site),
            year=int(year),
            expert_pct=100.0 * int(t.sum()) / n,
            estimated_pct=100.0 * int(p.sum()) / n,
            n_points=n,
        ))
    return records


@dataclass(frozen=True)
class RegressionFit:
    """Least-squares line estimated = intercept + slope * expert."""

    slope: float
    intercept: float
    r_squared: float
    n: int
    x_mean: float
    sxx: float
    residual_se: float
    t_crit: float
    ci95: tuple[float, ...]  # half-width of the mean-response band at each input x

    def predict(self, x) -> np.ndarray:
        return self.intercept + self.slope * np.asarray(x, dtype=np.float64)

    def band_halfwidth(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.t_crit * self.residual_se * np.sqrt(1.0 / self.n + (x - self.x_mean) ** 2 / self.sxx)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ci95"] = list(self.ci95)
        d["band"] = "95% mean-response confidence band, t critical value with n-2 degrees of freedom"
        d["direction"] = "x = expert_pct, y = estimated_pct"
        return d


def fit_ols(records: Sequence[CoverageRecord] | None = None, x=None, y=None) -> RegressionFit:
    """Fit estimated cover on expert cover.

    R^2 is 1 - SS_res/SS_tot; when the estimated cover is constant
    (SS_tot = 0) it is reported as 0.
    """
    if records is not None:
        x = [r.expert_pct for r in records]
        y = [r.estimated_pct for r in records]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise LengthMismatch(f"{x.size} x values for {y.size} y values")
    n = x.size
    if n < 3:
        raise DataError(f"regression needs at least 3 records, got {n}")
    x_mean, y_mean = x.mean(), y.mean()
    dx, dy = x - x_mean, y - y_mean
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateX("expert cover is constant; slope undefined")
    slope = float(dx @ dy) / sxx
    intercept = float(y_mean - slope * x_mean)
    resid = y - (intercept + slope * x)
    ss_res = float(resid @ resid)
    ss_tot = float(dy @ dy)
    r2 = 0.0 if ss_tot == 0.0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    se = math.sqrt(ss_res / (n - 2))
    t_crit = t_ppf(0.975, n - 2)
    half = t_crit * se * np.sqrt(1.0 / n + dx ** 2 / sxx)
    return RegressionFit(
        slope=slope, intercept=intercept, r_squared=r2, n=n, x_mean=float(x_mean), sxx=sxx,
        residual_se=se, t_crit=t_crit, ci95=tuple(float(h) for h in half),
    )


@dataclass(frozen=True)
class GroupCover:
    key: tuple
    n_images: int
    expert_mean: float
    estimated_mean: float


GROUPINGS = {
    "site": lambda r: (r.site_id,),
    "year": lambda r: (r.year,),
    "site_year": lambda r: (r.site_id, r.year),
}


def aggregate(records: Iterable[CoverageRecord], group_by: str = "site") -> list[GroupCover]:
    """Unweighted mean of per-image percentages within each group, groups in sorted key order."""
    try:
        keyfn = GROUPINGS[group_by.replace("×", "_")]
    except KeyError:
        raise DataError(f"unknown grouping {group_by!r}; use one of {sorted(GROUPINGS)}") from None
    groups: dict[tuple, list[CoverageRecord]] = {}
    for r in records:
        groups.setdefault(keyfn(r), []).append(r)
    out = []
    for key in sorted(groups):
        members = groups[key]
        out.append(GroupCover(
            key=key,
            n_images=len(members),
            expert_mean=math.fsum(r.expert_pct for r in members) / len(members),
            estimated_mean=math.fsum(r.estimated_pct for r in members) / len(members),
        ))
    return out


def write_coverage_csv(records: Sequence[CoverageRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COVERAGE_COLUMNS)
        for r in records:
            w.writerow([r.image_id, r.site_id, r.year, repr(r.expert_pct), repr(r.estimated_pct), r.n_points])


def read_coverage_csv(path: str | Path) -> list[CoverageRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(CoverageRecord(
                image_id=row["image_id"],
                site_id=row["site"],
                year=int(row["year"]),
                expert_pct=float(row["expert_pct"]),
                estimated_pct=float(row["estimated_pct"]),
                n_points=int(row.get("n_points") or 0),
            ))
    return out


def scatter_svg(records: Sequence[CoverageRecord], fit: RegressionFit | None, title: str = "") -> str:
    """Expert (x) vs estimated (y) cover: points, fitted line, identity line, shaded band."""
    size, pad = 420, 50
    span = size - 2 * pad

    def sx(v):
        return pad + span * v / 100.0

    def sy(v):
        return size - pad - span * v / 100.0

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="white" stroke="black"/>',
    ]
    if fit is not None:
        xs = np.linspace(0.0, 100.0, 51)
        mid = fit.predict(xs)
        half = fit.band_halfwidth(xs)
        upper = [(sx(a), sy(min(max(b, -50.0), 150.0))) for a, b in zip(xs, mid + half)]
        lower = [(sx(a), sy(min(max(b, -50.0), 150.0))) for a, b in zip(xs[::-1], (mid - half)[::-1])]
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in upper + lower)
        parts.append(f'<clipPath id="plot"><rect x="{pad}" y="{pad}" width="{span}" height="{span}"/></clipPath>')
        parts.append(f'<polygon clip-path="url(#plot)" points="{pts}" fill="#1f77b4" fill-opacity="0.25" stroke="none"/>')
        parts.append(
            f'<line clip-path="url(#plot)" x1="{sx(0):.2f}" y1="{sy(fit.intercept):.2f}" '
            f'x2="{sx(100):.2f}" y2="{sy(fit.intercept + 100 * fit.slope):.2f}" stroke="#1f77b4" stroke-width="2"/>'
        )
    parts.append(
        f'<line x1="{sx(0)}" y1="{sy(0)}" x2="{sx(100)}" y2="{sy(100)}" stroke="green" stroke-dasharray="6,4"/>'
    )
    for r in records:
        parts.append(f'<circle cx="{sx(r.expert_pct):.2f}" cy="{sy(r.estimated_pct):.2f}" r="2.5" fill="black"/>')
    label = title + (f"  R² = {fit.r_squared:.2f}" if fit is not None else "")
    parts += [
        f'<text x="{size / 2}" y="{pad - 20}" text-anchor="middle" font-size="14">{label}</text>',
        f'<text x="{size / 2}" y="{size - 12}" text-anchor="middle" font-size="12">expert cover (%)</text>',
        f'<text x="14" y="{size / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {size / 2})">estimated cover (%)</text>',
        f'<text x="{pad + 6}" y="{pad + 14}" font-size="10" fill="#1f77b4">fit, shaded: 95% mean-response band</text>',
        f'<text x="{pad + 6}" y="{pad + 26}" font-size="10" fill="green">dashed: perfect estimation</text>',
        "</svg>",
    ]
    return "\n".join(parts) + "\n"
