"""Synthetic labelled datacubes with analytically known water area and volume.

Each scene holds one disk-shaped basin whose radius follows
``r(t) = r0 + a*sin(2*pi*t/period) + b*t`` over a paraboloid depth bowl that
reaches zero at the largest shoreline. SAR bands carry L-look gamma
speckle; optical frames may be occluded by bright cloud blobs.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from hydrocube.datacube import BANDS, CubeManifest, DataCube, load_cube, parse_baseline, save_cube
from hydrocube.hydro import DEMRaster

WATER_REFLECTANCE = {"R": 0.03, "G": 0.06, "B": 0.07, "NIR": 0.015}
LAND_REFLECTANCE = {"R": 0.09, "G": 0.10, "B": 0.06, "NIR": 0.32}
CLOUD_REFLECTANCE = 0.9
WATER_VV, LAND_VV = 0.01, 0.2
VH_RATIO = 0.25
BASE_ELEVATION_M = 250.0


@dataclass(frozen=True)
class SceneParams:
    size: int = 300
    n_steps: int = 39
    center: tuple[float, float] | None = None
    r0: float = 60.0
    amplitude: float = 10.0
    period: int = 6
    trend: float = 0.0
    depth: float = 20.0
    looks: int = 4
    cloud_prob: float = 0.2
    dark_patches: int = 3
    mudflats: bool = True
    seed: int = 0
    pixel_size_m: float = 10.0
    start: dt.date = dt.date(2016, 7, 1)
    cadence_months: int = 2
    lat: float = 41.9
    lon: float = 12.5
    processing_baseline: str = "04.00"

    def __post_init__(self):
        if self.center is None:
            c = (self.size - 1) / 2.0
            object.__setattr__(self, "center", (c, c))
        else:
            object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        problems = []
        span = self.n_steps - 1
        if self.n_steps < 1 or self.size < 16:
            problems.append("need n_steps >= 1 and size >= 16")
        drift = self.trend * span
        if self.r0 - abs(self.amplitude) + min(0.0, drift) <= 2:
            problems.append("basin radius can fall to <= 2 px")
        if self.looks < 1:
            problems.append("looks must be >= 1")
        if self.dark_patches < 0:
            problems.append("dark_patches must be >= 0")
        if not 0 <= self.cloud_prob <= 1:
            problems.append("cloud_prob must lie in [0, 1]")
        if self.depth <= 0 or self.period < 2:
            problems.append("depth must be positive and period >= 2")
        rmax = self.r0 + abs(self.amplitude) + max(0.0, drift)
        cy, cx = self.center
        if min(cy, cx) - rmax < 0 or max(cy, cx) + rmax > self.size - 1:
            problems.append("basin leaves the frame")
        if problems:
            raise ValueError("invalid scene parameters: " + "; ".join(problems))
        parse_baseline(self.processing_baseline)

    def radius(self, t) -> np.ndarray | float:
        t = np.asarray(t, dtype=np.float64)
        r = self.r0 + self.amplitude * np.sin(2 * np.pi * t / self.period) + self.trend * t
        return float(r) if r.ndim == 0 else r

    @property
    def basin_radius(self) -> float:
        """Largest shoreline radius over the sampled timesteps; the bowl is zero there."""
        return float(np.max(self.radius(np.arange(self.n_steps))))

    @property
    def dates(self) -> list[dt.date]:
        return [_add_months(self.start, self.cadence_months * t) for t in range(self.n_steps)]

    def to_json(self) -> dict:
        d = asdict(self)
        d["center"] = list(self.center)
        d["start"] = self.start.isoformat()
        return d

    @classmethod
    def from_json(cls, data: dict) -> "SceneParams":
        data = dict(data)
        data["start"] = dt.date.fromisoformat(data["start"])
        data["center"] = tuple(data["center"])
        return cls(**data)


def _add_months(d: dt.date, months: int) -> dt.date:
    m = d.month - 1 + months
    return d.replace(year=d.year + m // 12, month=m % 12 + 1)


@dataclass(frozen=True)
class SyntheticScene:
    cube: DataCube
    truth_masks: np.ndarray
    dem: DEMRaster
    clean_sar: np.ndarray
    params: SceneParams


def speckle_pair(clean, looks: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Multiply ``clean`` intensity by unit-mean gamma noise of shape ``looks``."""
    if looks < 1:
        raise ValueError(f"looks must be >= 1, got {looks}")
    clean = np.asarray(clean, dtype=np.float64)
    if (clean < 0).any():
        raise ValueError("clean intensity must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noise = rng.gamma(shape=looks, scale=1.0 / looks, size=clean.shape)
    return clean * noise, clean


def disk_volume(radius_px: float, depth: float, basin_radius_px: float, pixel_size_m: float = 10.0) -> float:
    """Water volume of a disk of ``radius_px`` over the paraboloid bowl
    ``depth * (1 - rho^2 / basin_radius^2)``: ``pi*d*R^2*(1 - R^2/(2*Rb^2))``."""
    if radius_px <= 0:
        return 0.0
    r = min(radius_px, basin_radius_px)
    rm = r * pixel_size_m
    return math.pi * depth * rm * rm * (1.0 - r * r / (2.0 * basin_radius_px**2))


def analytic_truth(params: SceneParams, t: int) -> tuple[float, float]:
    """Closed-form (area m^2, volume m^3) of the basin at timestep ``t``."""
    if not 0 <= t < params.n_steps:
        raise ValueError(f"timestep {t} outside [0, {params.n_steps})")
    r = max(params.radius(t), 0.0)
    area = math.pi * (r * params.pixel_size_m) ** 2
    return area, disk_volume(r, params.depth, params.basin_radius, params.pixel_size_m)


def _grids(params: SceneParams):
    ii, jj = np.mgrid[0 : params.size, 0 : params.size].astype(np.float64)
    cy, cx = params.center
    return ii, jj, (ii - cy) ** 2 + (jj - cx) ** 2


def disk_masks(params: SceneParams) -> np.ndarray:
    _, _, rho2 = _grids(params)
    r = np.maximum(params.radius(np.arange(params.n_steps)), 0.0)
    return (rho2[None] <= (r**2)[:, None, None]).astype(np.uint8)


def bowl_depth(params: SceneParams) -> np.ndarray:
    _, _, rho2 = _grids(params)
    return params.depth * np.maximum(0.0, 1.0 - rho2 / params.basin_radius**2)


def _smooth_field(rng, size, n_waves=6):
    ii, jj = np.mgrid[0:size, 0:size] / size
    f = np.zeros((size, size))
    for _ in range(n_waves):
        ky, kx = rng.uniform(0.5, 4.0, 2)
        f += np.sin(2 * np.pi * (ky * ii + kx * jj) + rng.uniform(0, 2 * np.pi))
    return f / n_waves


def _cloud_mask(rng, size):
    ii, jj = np.mgrid[0:size, 0:size]
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(0, size, 2)
        r = rng.uniform(0.1, 0.3) * size
        mask |= (ii - cy) ** 2 + (jj - cx) ** 2 <= r * r
    return mask


def _dark_land(rng, params: SceneParams, n: int) -> np.ndarray:
    """Smooth-surface land (tarmac, bare soil) that backscatters like open water."""
    ii, jj, rho2 = _grids(params)
    outside = rho2 > (params.basin_radius + 3) ** 2
    mask = np.zeros_like(outside)
    for _ in range(n):
        for _ in range(50):
            cy, cx = rng.uniform(0, params.size, 2)
            if outside[int(cy), int(cx)]:
                break
        for _ in range(rng.integers(1, 4)):
            r = rng.uniform(0.06, 0.12) * params.size
            oy, ox = rng.normal(0, r / 2, 2)
            mask |= (ii - cy - oy) ** 2 + (jj - cx - ox) ** 2 <= r * r
    return mask & outside


def generate_scene(params: SceneParams) -> SyntheticScene:
    rng = np.random.default_rng(params.seed)
    T, S = params.n_steps, params.size
    masks = disk_masks(params)
    depth = bowl_depth(params)
    water = masks.astype(bool)

    ii, jj, _ = _grids(params)
    relief = 3.0 * _smooth_field(rng, S) + 0.02 * params.pixel_size_m * (ii + jj) / 2
    elevation = BASE_ELEVATION_M + relief - depth
    gy, gx = np.gradient(elevation, params.pixel_size_m)
    slope = np.degrees(np.arctan(np.hypot(gy, gx)))

    texture = 1.0 + 0.3 * _smooth_field(rng, S)
    dark = _dark_land(rng, params, params.dark_patches)
    land_vv = np.where(dark, WATER_VV, LAND_VV * texture)
    land_vh = np.where(dark, WATER_VV * 0.3, LAND_VV * VH_RATIO * texture)
    # exposed wet lakebed on one side of the basin is as dark as open water in SAR
    cy, cx = params.center
    theta0 = rng.uniform(0, 2 * np.pi)
    facing = np.cos(np.arctan2(ii - cy, jj - cx) - theta0) > 0
    bed = facing & (_grids(params)[2] <= (params.basin_radius + 1) ** 2) if params.mudflats else np.zeros((S, S), bool)
    offset = 1000.0 if parse_baseline(params.processing_baseline) >= (4, 0) else 0.0

    values = np.empty((T, S, S, len(BANDS)), dtype=np.float32)
    clean_sar = np.empty((T, S, S, 2), dtype=np.float32)
    cloud_fraction = []
    for t in range(T):
        gain = 1.0 + 0.05 * rng.standard_normal()
        dark_t = water[t] | bed
        vv = np.where(dark_t, WATER_VV, land_vv * gain)
        vh = np.where(dark_t, WATER_VV * 0.3, land_vh * gain)
        clean_sar[t, ..., 0] = vv
        clean_sar[t, ..., 1] = vh
        values[t, ..., 0] = speckle_pair(vv, params.looks, rng)[0]
        values[t, ..., 1] = speckle_pair(vh, params.looks, rng)[0]

        clouds = _cloud_mask(rng, S) if rng.random() < params.cloud_prob else np.zeros((S, S), bool)
        cloud_fraction.append(float(clouds.mean()))
        for name in ("R", "G", "B", "NIR"):
            refl = np.where(water[t], WATER_REFLECTANCE[name], LAND_REFLECTANCE[name] * (0.85 + 0.15 * texture))
            refl = np.where(clouds, CLOUD_REFLECTANCE, refl)
            values[t, ..., BANDS.index(name)] = np.round(refl * 10000.0) + offset
        values[t, ..., 6] = slope
        values[t, ..., 7] = elevation

    manifest = CubeManifest(
        lat=params.lat,
        lon=params.lon,
        timestamps=tuple(params.dates),
        width=S,
        height=S,
        pixel_size_m=params.pixel_size_m,
        processing_baseline=params.processing_baseline,
        cadence_months=params.cadence_months,
        cloud_fraction=tuple(cloud_fraction),
    )
    cube = DataCube(manifest, values)
    # float32-representable so the on-disk sidecar round-trips exactly
    dem = DEMRaster(depth.astype(np.float32).astype(np.float64), params.pixel_size_m**2)
    return SyntheticScene(cube, masks, dem, clean_sar, params)


def scene_family(n: int, base: SceneParams, seed: int = 0) -> list[SceneParams]:
    """``n`` scene parameter sets with varied geometry and phase, distinct locations."""
    rng = np.random.default_rng(seed)
    out = []
    S = base.size
    for k in range(n):
        margin = base.r0 + abs(base.amplitude) + max(0.0, base.trend * (base.n_steps - 1)) + 2
        lo, hi = margin, S - 1 - margin
        center = tuple(rng.uniform(lo, hi, 2)) if hi > lo else None
        out.append(
            replace(
                base,
                center=center,
                seed=int(rng.integers(0, 2**31 - 1)),
                lat=round(base.lat + 0.05 * k, 6),
                lon=round(base.lon + 0.07 * k, 6),
                start=_add_months(base.start, int(rng.integers(0, base.period)) * base.cadence_months),
            )
        )
    return out


def write_scene(scene: SyntheticScene, path) -> Path:
    """Container plus ``truth_masks.raw``, ``dem.raw``, ``clean_sar.raw`` and ``params.json``."""
    path = save_cube(scene.cube, path)
    (path / "truth_masks.raw").write_bytes(np.ascontiguousarray(scene.truth_masks, dtype=np.uint8).tobytes())
    (path / "dem.raw").write_bytes(np.ascontiguousarray(scene.dem.heights, dtype="<f4").tobytes())
    (path / "clean_sar.raw").write_bytes(np.ascontiguousarray(scene.clean_sar, dtype="<f4").tobytes())
    (path / "params.json").write_text(json.dumps(scene.params.to_json(), indent=2, sort_keys=True) + "\n")
    return path


def load_scene(path) -> SyntheticScene:
    path = Path(path)
    cube = load_cube(path)
    params = SceneParams.from_json(json.loads((path / "params.json").read_text()))
    T, H, W, _ = cube.values.shape
    masks = np.frombuffer((path / "truth_masks.raw").read_bytes(), dtype=np.uint8).reshape(T, H, W)
    heights = np.frombuffer((path / "dem.raw").read_bytes(), dtype="<f4").reshape(H, W)
    clean = np.frombuffer((path / "clean_sar.raw").read_bytes(), dtype="<f4").reshape(T, H, W, 2)
    return SyntheticScene(cube, masks.copy(), DEMRaster(heights.astype(np.float64), params.pixel_size_m**2), clean.copy(), params)
