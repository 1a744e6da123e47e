"""Surface area and volume of water bodies from masks and a DEM, dated
series of both, seasonal-trend decomposition and comparison against ground
measurements.

The DEM raster is read as water-column depth of the full basin, so the
volume for a partial extent is the depth summed over the current mask.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from hydrocube import kernels

PIXEL_AREA_M2 = 100.0
DATE_TOLERANCE_DAYS = 7


@dataclass(frozen=True)
class DEMRaster:
    heights: np.ndarray
    pixel_area: float = PIXEL_AREA_M2

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=np.float64)
        if h.ndim != 2:
            raise ValueError(f"DEM must be 2-D, got shape {h.shape}")
        if not np.isfinite(h).all() or (h < 0).any():
            raise ValueError("DEM heights must be finite and non-negative")
        if self.pixel_area <= 0:
            raise ValueError("pixel area must be positive")
        h.flags.writeable = False
        object.__setattr__(self, "heights", h)

    def scaled(self, factor: float) -> "DEMRaster":
        return DEMRaster(self.heights * factor, self.pixel_area)


@dataclass(frozen=True)
class HydroRecord:
    date: dt.date
    area_m2: float
    volume_m3: float
    pixels: int


@dataclass(frozen=True)
class HydroSeries:
    name: str
    records: tuple[HydroRecord, ...]

    @property
    def dates(self) -> list[dt.date]:
        return [r.date for r in self.records]

    @property
    def areas(self) -> np.ndarray:
        return np.array([r.area_m2 for r in self.records], dtype=np.float64)

    @property
    def volumes(self) -> np.ndarray:
        return np.array([r.volume_m3 for r in self.records], dtype=np.float64)

    def __len__(self):
        return len(self.records)


def _binary(mask) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype != bool:
        if not np.isin(mask, (0, 1)).all():
            raise ValueError("water mask must be binary (0/1)")
        mask = mask.astype(bool)
    return mask


def surface_area(mask, pixel_area: float = PIXEL_AREA_M2) -> float:
    if pixel_area <= 0:
        raise ValueError("pixel area must be positive")
    return int(np.count_nonzero(_binary(mask))) * pixel_area


def water_volume(mask, dem: DEMRaster) -> float:
    """Sum of DEM depth times pixel area over water pixels."""
    mask = _binary(mask)
    if mask.shape != dem.heights.shape:
        raise ValueError(f"mask {mask.shape} and DEM {dem.heights.shape} are not aligned")
    return kernels.masked_sum(mask, dem.heights) * dem.pixel_area


def build_series(dates: Sequence[dt.date], masks, dem: DEMRaster, name: str = "basin") -> HydroSeries:
    dates = list(dates)
    if len(dates) != len(masks):
        raise ValueError("one mask per date required")
    for a, b in zip(dates, dates[1:]):
        if b == a:
            raise ValueError(f"duplicate date {a}")
        if b < a:
            raise ValueError(f"dates not increasing: {a} then {b}")
    records = []
    for d, m in zip(dates, masks):
        m = _binary(m)
        pixels = int(np.count_nonzero(m))
        records.append(HydroRecord(d, pixels * dem.pixel_area, water_volume(m, dem), pixels))
    return HydroSeries(name, tuple(records))


@dataclass(frozen=True)
class TrendResult:
    slope: float
    intercept: float
    trend: np.ndarray
    seasonal: np.ndarray
    residual: np.ndarray
    period: int


def _centered_moving_average(y: np.ndarray, period: int) -> np.ndarray:
    """Centred MA of width ``period`` (a 2 x period MA when the period is even); NaN at the ends."""
    n = len(y)
    out = np.full(n, np.nan)
    if period % 2:
        weights = np.full(period, 1.0)
        norm = period
    else:
        weights = np.full(period + 1, 2.0)
        weights[0] = weights[-1] = 1.0
        norm = 2 * period
    half = len(weights) // 2
    for i in range(half, n - half):
        out[i] = np.dot(weights, y[i - half : i + half + 1]) / norm
    return out


def trend(series, seasonal_period: int) -> TrendResult:
    """Classical additive decomposition: moving-average trend, least-squares slope,
    per-phase seasonal means and the remaining residual."""
    y = series.volumes if isinstance(series, HydroSeries) else np.asarray(series, dtype=np.float64)
    n = len(y)
    if seasonal_period < 2:
        raise ValueError("seasonal period must be >= 2")
    if n < 2 * seasonal_period:
        raise ValueError(f"series of length {n} is too short for period {seasonal_period}")
    # work on deviations from the first sample so a constant series decomposes to exact zeros
    base = y[0]
    dev = y - base
    ma = _centered_moving_average(dev, seasonal_period)
    ok = ~np.isnan(ma)
    t = np.arange(n, dtype=np.float64)
    tx = t[ok] - t[ok].mean()
    ty = ma[ok] - ma[ok].mean()
    slope = float(np.dot(tx, ty) / np.dot(tx, tx))
    intercept = float(ma[ok].mean() - slope * t[ok].mean())
    trend_dev = np.where(ok, ma, intercept + slope * t)
    detrended = dev - trend_dev
    phase_means = np.array([detrended[(t % seasonal_period == p) & ok].mean() for p in range(seasonal_period)])
    phase_means -= phase_means.mean()
    seasonal = phase_means[np.arange(n) % seasonal_period]
    residual = detrended - seasonal
    return TrendResult(slope, intercept + base, trend_dev + base, seasonal, residual, seasonal_period)


@dataclass(frozen=True)
class ValidationRow:
    date: dt.date
    ground_truth_m2: float
    measured_m2: float
    difference_m2: float


def validate_against_ground(series: HydroSeries, gt_rows, tolerance_days: int = DATE_TOLERANCE_DAYS) -> list[ValidationRow]:
    """Match each ``(date, area)`` ground-truth row to the nearest series record."""
    if not series.records:
        raise ValueError("empty series")
    out = []
    for gdate, garea in gt_rows:
        rec = min(series.records, key=lambda r: abs((r.date - gdate).days))
        if abs((rec.date - gdate).days) > tolerance_days:
            raise ValueError(f"no series record within {tolerance_days} days of {gdate}")
        out.append(ValidationRow(gdate, garea, rec.area_m2, garea - rec.area_m2))
    return out


@dataclass(frozen=True)
class GroundTableRow:
    date: dt.date
    gt_area: int
    measured_area: int
    printed_difference: int
    verbatim: tuple[str, str, str]


def load_table_v() -> list[GroundTableRow]:
    """Olivo Dam reference table. Digits are kept verbatim; the period is read as a
    thousands separator, so ``512.700`` becomes 512700."""
    text = resources.files("hydrocube").joinpath("data/olivo_table_v.csv").read_text()
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        raw = (rec["gt_area_m2"], rec["measured_area_m2"], rec["difference_m2"])
        ints = [int(v.replace(".", "")) for v in raw]
        date = dt.datetime.strptime(rec["date"], "%m/%d/%Y").date()
        rows.append(GroundTableRow(date, ints[0], ints[1], ints[2], raw))
    return rows


def table_v_validation() -> list[ValidationRow]:
    rows = load_table_v()
    measured = HydroSeries(
        "olivo",
        tuple(HydroRecord(r.date, r.measured_area, math.nan, 0) for r in rows),
    )
    return validate_against_ground(measured, [(r.date, r.gt_area) for r in rows])


def _num(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if v.is_integer():
        return str(int(v))
    return f"{v:.6f}"


def validation_csv(rows: Sequence[ValidationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["date", "gt_area_m2", "measured_area_m2", "difference_m2"])
    for r in rows:
        w.writerow([r.date.isoformat(), _num(r.ground_truth_m2), _num(r.measured_m2), _num(r.difference_m2)])
    return buf.getvalue()


def series_csv(series: HydroSeries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["date", "area_m2", "volume_m3", "pixels"])
    for r in series.records:
        w.writerow([r.date.isoformat(), _num(r.area_m2), _num(r.volume_m3), r.pixels])
    return buf.getvalue()


def read_series_csv(path, name: str | None = None) -> HydroSeries:
    path = Path(path)
    with path.open(newline="") as fh:
        records = tuple(
            HydroRecord(dt.date.fromisoformat(r["date"]), float(r["area_m2"]), float(r["volume_m3"]), int(r["pixels"]))
            for r in csv.DictReader(fh)
        )
    return HydroSeries(name or path.stem, records)


def plot_series(series: HydroSeries, path) -> np.ndarray:
    """Volume-vs-date curve as PNG. Returns the plotted y values."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 3.5))
    (line,) = ax.plot(series.dates, series.volumes, marker="o", ms=3)
    ax.set_title(f"{series.name}: water volume")
    ax.set_ylabel("volume [m$^3$]")
    ax.grid(alpha=0.3)
    fig.autofmt_xdate()
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return np.asarray(line.get_ydata(), dtype=np.float64)
