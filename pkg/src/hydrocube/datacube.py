"""Spatiotemporal datacube: container I/O, band harmonization, resampling,
normalization and patch extraction.

A container is a directory::

    <name>/manifest.json
    <name>/t_0000.raw ... t_<T-1>.raw

Each raster holds one timestep as little-endian float32, row-major with the
bands of a pixel stored contiguously, i.e. an ``(H, W, B)`` array.
"""

from __future__ import annotations

import datetime as dt
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from hydrocube import kernels

BANDS = ("VV", "VH", "R", "G", "B", "NIR", "SLOPE", "ELEVATION")
S1_BANDS = ("VV", "VH")
S2_BANDS = ("R", "G", "B", "NIR")
STATIC_BANDS = ("SLOPE", "ELEVATION")

HARMONIZE_OFFSET = 1000
HARMONIZE_FROM = (4, 0)
SUPPORTED_RESOLUTIONS = (10, 20, 60)
MIN_PATCH = 16
DTYPE = "f32le"
_RAW_DTYPE = np.dtype("<f4")


class CubeFormatError(ValueError):
    """A container on disk does not match its manifest."""


@dataclass(frozen=True)
class BandIndex:
    ordinal: int
    name: str

    def __post_init__(self):
        if self.name not in BANDS:
            raise ValueError(f"unknown band name {self.name!r}")
        if not 0 <= self.ordinal < len(BANDS):
            raise ValueError(f"band ordinal out of range: {self.ordinal}")


def band_table(names: Sequence[str] = BANDS) -> tuple[BandIndex, ...]:
    names = tuple(names)
    unknown = [n for n in names if n not in BANDS]
    if unknown:
        raise CubeFormatError(f"unknown band name(s): {unknown}")
    if len(names) != len(BANDS) or len(set(names)) != len(BANDS):
        raise CubeFormatError(f"expected the {len(BANDS)} distinct bands {BANDS}, got {names}")
    return tuple(BandIndex(i, n) for i, n in enumerate(names))


@dataclass(frozen=True)
class CubeManifest:
    lat: float
    lon: float
    timestamps: tuple[dt.date, ...]
    width: int
    height: int
    bands: tuple[str, ...] = BANDS
    pixel_size_m: float = 10.0
    processing_baseline: str = "03.01"
    dtype: str = DTYPE
    harmonized: bool = False
    normalization: dict | None = None
    cadence_months: int = 2
    cadence_tolerance_days: int = 20
    cloud_fraction: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "timestamps", tuple(self.timestamps))
        object.__setattr__(self, "bands", tuple(self.bands))
        band_table(self.bands)
        if self.dtype != DTYPE:
            raise CubeFormatError(f"unsupported dtype {self.dtype!r}, expected {DTYPE!r}")
        for a, b in zip(self.timestamps, self.timestamps[1:]):
            if b <= a:
                raise CubeFormatError(f"timestamps not strictly increasing: {a} then {b}")
        if self.width <= 0 or self.height <= 0 or self.pixel_size_m <= 0:
            raise CubeFormatError("width, height and pixel size must be positive")
        parse_baseline(self.processing_baseline)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (len(self.timestamps), self.height, self.width, len(self.bands))

    @property
    def footprint_m(self) -> tuple[float, float]:
        return (self.height * self.pixel_size_m, self.width * self.pixel_size_m)

    @property
    def gaps(self) -> list[int]:
        """Indices ``i`` where the step from ``i`` to ``i + 1`` exceeds the nominal cadence."""
        nominal = 30.44 * self.cadence_months
        return [
            i
            for i, (a, b) in enumerate(zip(self.timestamps, self.timestamps[1:]))
            if (b - a).days > nominal + self.cadence_tolerance_days
        ]

    def band(self, name: str) -> int:
        return self.bands.index(name)

    def to_json(self) -> dict:
        return {
            "lat": self.lat,
            "lon": self.lon,
            "timestamps": [t.isoformat() for t in self.timestamps],
            "pixel_size_m": self.pixel_size_m,
            "width": self.width,
            "height": self.height,
            "bands": list(self.bands),
            "dtype": self.dtype,
            "processing_baseline": self.processing_baseline,
            "harmonized": self.harmonized,
            "normalization": self.normalization,
            "cadence_months": self.cadence_months,
            "cadence_tolerance_days": self.cadence_tolerance_days,
            "gaps": self.gaps,
            "cloud_fraction": None if self.cloud_fraction is None else list(self.cloud_fraction),
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "CubeManifest":
        try:
            timestamps = tuple(dt.date.fromisoformat(t) for t in data["timestamps"])
            cf = data.get("cloud_fraction")
            return cls(
                lat=float(data["lat"]),
                lon=float(data["lon"]),
                timestamps=timestamps,
                width=int(data["width"]),
                height=int(data["height"]),
                bands=tuple(data["bands"]),
                pixel_size_m=float(data.get("pixel_size_m", 10.0)),
                processing_baseline=str(data.get("processing_baseline", "03.01")),
                dtype=data.get("dtype", DTYPE),
                harmonized=bool(data.get("harmonized", False)),
                normalization=data.get("normalization"),
                cadence_months=int(data.get("cadence_months", 2)),
                cadence_tolerance_days=int(data.get("cadence_tolerance_days", 20)),
                cloud_fraction=None if cf is None else tuple(float(c) for c in cf),
            )
        except KeyError as exc:
            raise CubeFormatError(f"manifest missing key {exc}") from None


@dataclass(frozen=True)
class DataCube:
    """One location's ``(time, height, width, band)`` stack. Values are read-only float32."""

    manifest: CubeManifest
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.shape != self.manifest.shape:
            raise CubeFormatError(f"values shape {values.shape} != manifest shape {self.manifest.shape}")
        if values is self.values and values.flags.writeable:
            values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def location(self) -> tuple[float, float]:
        return (self.manifest.lat, self.manifest.lon)

    def band(self, name: str) -> np.ndarray:
        """``(T, H, W)`` view of one band."""
        return self.values[..., self.manifest.band(name)]

    def with_values(self, values: np.ndarray, **manifest_changes) -> "DataCube":
        return DataCube(replace(self.manifest, **manifest_changes), values)

    def validate(self) -> None:
        if self.values.shape[0] == 0:
            raise ValueError("empty time axis")
        if not np.isfinite(self.values).all():
            raise ValueError("cube contains non-finite values")
        for name in STATIC_BANDS:
            b = self.band(name)
            if not (b == b[:1]).all():
                raise ValueError(f"static band {name} varies over time")


def save_cube(cube: DataCube, path) -> Path:
    """Write ``cube`` as a container directory; ``load_cube`` returns it bit-identically."""
    cube.validate()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for stale in path.glob("t_*.raw"):
        stale.unlink()
    for t, frame in enumerate(cube.values):
        (path / f"t_{t:04d}.raw").write_bytes(np.ascontiguousarray(frame, dtype=_RAW_DTYPE).tobytes())
    (path / "manifest.json").write_text(json.dumps(cube.manifest.to_json(), indent=2) + "\n")
    return path


def load_cube(path) -> DataCube:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise CubeFormatError(f"missing manifest: {mpath}")
    try:
        manifest = CubeManifest.from_json(json.loads(mpath.read_text()))
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        if isinstance(exc, CubeFormatError):
            raise
        raise CubeFormatError(f"bad manifest {mpath}: {exc}") from None
    T, H, W, B = manifest.shape
    files = sorted(path.glob("t_*.raw"))
    if len(files) != T:
        raise CubeFormatError(f"payload/manifest mismatch: manifest declares T={T}, found {len(files)} rasters")
    frames = []
    for t in range(T):
        f = path / f"t_{t:04d}.raw"
        if not f.is_file():
            raise CubeFormatError(f"payload/manifest mismatch: missing {f.name}")
        raw = np.frombuffer(f.read_bytes(), dtype=_RAW_DTYPE)
        if raw.size != H * W * B:
            raise CubeFormatError(f"payload/manifest mismatch: {f.name} holds {raw.size} values, expected {H * W * B}")
        frames.append(raw.reshape(H, W, B))
    values = np.stack(frames) if frames else np.zeros((0, H, W, B), np.float32)
    return DataCube(manifest, values.astype(np.float32))


def parse_baseline(baseline: str) -> tuple[int, int]:
    m = re.fullmatch(r"\s*(\d{1,2})\.(\d{1,2})\s*", str(baseline))
    if not m:
        raise ValueError(f"unparseable processing baseline {baseline!r}")
    return int(m.group(1)), int(m.group(2))


def harmonize_dn(raster, baseline: str) -> np.ndarray:
    """Remove the +1000 DN offset carried by products of baseline 04.00 and later."""
    raster = np.asarray(raster)
    if parse_baseline(baseline) < HARMONIZE_FROM:
        return raster.copy()
    # where() rather than subtract-then-clip: unsigned DN types would wrap
    return np.where(raster > HARMONIZE_OFFSET, raster - HARMONIZE_OFFSET, 0).astype(raster.dtype, copy=False)


def harmonize_cube(cube: DataCube) -> DataCube:
    if cube.manifest.harmonized:
        return cube
    values = np.array(cube.values)
    for name in S2_BANDS:
        i = cube.manifest.band(name)
        values[..., i] = harmonize_dn(values[..., i], cube.manifest.processing_baseline)
    return cube.with_values(values, harmonized=True)


def resample_band(raster, src_res: int, dst_res: int = 10, method: str = "bilinear") -> np.ndarray:
    """Upsample a 20 m or 60 m band onto the 10 m grid."""
    if src_res not in SUPPORTED_RESOLUTIONS or dst_res != 10:
        raise ValueError(f"unsupported resolution pair {src_res} m -> {dst_res} m")
    factor = src_res // dst_res
    raster = np.asarray(raster)
    if raster.ndim != 2:
        raise ValueError("resample_band expects a 2-D raster")
    if factor == 1:
        return raster.copy()
    if method == "nearest":
        return np.repeat(np.repeat(raster, factor, axis=0), factor, axis=1)
    if method == "bilinear":
        return kernels.bilinear_upsample(raster, factor)
    raise ValueError(f"unknown resampling method {method!r}")


def default_normalization() -> dict:
    scheme = {name: {"kind": "fixed", "min": 0.0, "max": 10000.0} for name in S2_BANDS}
    for name in S1_BANDS:
        scheme[name] = {"kind": "fixed", "min": -30.0, "max": 0.0, "transform": "db"}
    scheme["SLOPE"] = {"kind": "fixed", "min": 0.0, "max": 90.0}
    scheme["ELEVATION"] = {"kind": "percentile", "low": 2.0, "high": 98.0}
    return scheme


def _normalize_band(x: np.ndarray, rule: Mapping) -> tuple[np.ndarray, dict]:
    x = x.astype(np.float64)
    if rule.get("transform") == "db":
        x = 10.0 * np.log10(np.maximum(x, 1e-6))
    elif rule.get("transform") not in (None, "none"):
        raise ValueError(f"unknown transform {rule['transform']!r}")
    kind = rule.get("kind")
    if kind == "fixed":
        lo, hi = float(rule["min"]), float(rule["max"])
        if hi <= lo:
            raise ValueError(f"fixed range needs max > min, got ({lo}, {hi})")
    elif kind == "percentile":
        lo, hi = (float(v) for v in np.percentile(x, [rule.get("low", 2.0), rule.get("high", 98.0)]))
    else:
        raise ValueError(f"unknown normalization kind {kind!r}")
    record = {**rule, "applied_min": lo, "applied_max": hi}
    if hi <= lo:
        return np.zeros_like(x), record
    return np.clip((x - lo) / (hi - lo), 0.0, 1.0), record


def normalize(cube: DataCube, scheme: Mapping | None = None) -> DataCube:
    """Map every band into [0, 1]; the applied ranges are recorded in the manifest."""
    if cube.manifest.normalization is not None:
        raise ValueError("cube is already normalized")
    scheme = dict(default_normalization() if scheme is None else scheme)
    missing = [b for b in cube.manifest.bands if b not in scheme]
    if missing:
        raise ValueError(f"normalization scheme lacks bands {missing}")
    out = np.empty(cube.values.shape, dtype=np.float32)
    record = {}
    for i, name in enumerate(cube.manifest.bands):
        out[..., i], record[name] = _normalize_band(cube.values[..., i], scheme[name])
    return cube.with_values(out, normalization=record)


@dataclass(frozen=True)
class PatchSeries:
    parent: CubeManifest
    origin: tuple[int, int]
    size: int
    values: np.ndarray = field(repr=False)


def extract_patch_series(cube: DataCube, origin: tuple[int, int], size: int = 64) -> PatchSeries:
    r, c = origin
    if size < MIN_PATCH:
        raise ValueError(f"patch size must be >= {MIN_PATCH}, got {size}")
    _, H, W, _ = cube.values.shape
    if r < 0 or c < 0 or r + size > H or c + size > W:
        raise ValueError(f"patch at {origin} of size {size} falls outside the {H}x{W} frame")
    return PatchSeries(cube.manifest, (r, c), size, cube.values[:, r : r + size, c : c + size, :])


def tile_origins(height: int, width: int, size: int, stride: int) -> list[tuple[int, int]]:
    """Top-left corners of a ``size`` tiling at ``stride``; the last row/column is snapped to the edge."""
    if stride <= 0 or size > min(height, width):
        raise ValueError("invalid tiling")

    def axis(n):
        starts = list(range(0, n - size + 1, stride))
        if starts[-1] != n - size:
            starts.append(n - size)
        return starts

    return [(r, c) for r in axis(height) for c in axis(width)]


def tile_cube(cube: DataCube, size: int = 64, stride: int | None = None) -> list[PatchSeries]:
    _, H, W, _ = cube.values.shape
    return [extract_patch_series(cube, o, size) for o in tile_origins(H, W, size, stride or size)]


def temporal_split(cubes: Iterable, ratio: float, seed: int = 0) -> tuple[list, list]:
    """Partition cubes into train/validation by location; no location lands in both."""
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    cubes = list(cubes)
    by_loc: dict = {}
    for cube in cubes:
        by_loc.setdefault(_location_of(cube), []).append(cube)
    locations = sorted(by_loc)
    if len(locations) < 2:
        raise ValueError("need at least 2 distinct locations to split")
    order = np.random.default_rng(seed).permutation(len(locations))
    n_train = min(max(int(math.floor(ratio * len(locations) + 0.5)), 1), len(locations) - 1)
    train_locs = {locations[i] for i in order[:n_train]}
    train = [c for loc in locations if loc in train_locs for c in by_loc[loc]]
    val = [c for loc in locations if loc not in train_locs for c in by_loc[loc]]
    return train, val


def _location_of(item) -> tuple:
    if isinstance(item, DataCube):
        return item.location
    if isinstance(item, CubeManifest):
        return (item.lat, item.lon)
    loc = getattr(item, "location", item)
    return tuple(loc) if isinstance(loc, (list, tuple)) else (loc,)
