"""Experiment runner: datacube -> despeckle -> segment -> forecast -> hydro.

Every stage writes under ``<output_dir>/<stage>/`` and replaces its own
directory when re-run. ``report.json`` is assembled from whatever stage
outputs are on disk, so a partial re-run still yields a complete report.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hydrocube import despeckle as dsp
from hydrocube import forecast as fc
from hydrocube import hydro, metrics
from hydrocube import segmentation as seg
from hydrocube._training import sub_seed, write_csv_log
from hydrocube.config import STAGES, RunConfig
from hydrocube.datacube import harmonize_cube, normalize, temporal_split, tile_origins
from hydrocube.synthgen import SyntheticScene, _add_months, load_scene

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
REPORT = "report.json"
MANIFEST = "run_manifest.json"


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


@dataclass
class SceneRecord:
    name: str
    scene: SyntheticScene
    split: str = "train"

    @property
    def location(self):
        return self.scene.cube.location

    @property
    def dates(self):
        return list(self.scene.cube.manifest.timestamps)


def fixed(v, digits: int = 10):
    """Round floats to ``digits`` significant figures so report.json is stable text."""
    if isinstance(v, dict):
        return {k: fixed(x, digits) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [fixed(x, digits) for x in v]
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not math.isfinite(v):
            return None
        return float(f"{v:.{digits}g}")
    if isinstance(v, np.integer):
        return int(v)
    return v


# ---------------------------------------------------------------- datacube


def load_scenes(cfg: RunConfig) -> list[SceneRecord]:
    root = cfg.path("scenes_dir")
    if not root.is_dir():
        raise FileNotFoundError(f"scenes directory not found: {root}")
    dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not dirs:
        raise FileNotFoundError(f"no scene containers in {root}")
    records = []
    for d in dirs:
        scene = load_scene(d)
        scene.cube.validate()
        records.append(SceneRecord(d.name, scene))
    if len(records) < 2:
        raise ValueError("need at least two scenes for a train/validation split")
    _, val = temporal_split(records, cfg.train_fraction, sub_seed(cfg.seed, "split"))
    val_names = {r.name for r in val}
    for r in records:
        r.split = "val" if r.name in val_names else "train"
    return records


def stage_datacube(cfg, records, out: Path) -> None:
    rows = []
    for r in records:
        m = r.scene.cube.manifest
        cf = m.cloud_fraction or ()
        rows.append(
            {
                "scene": r.name,
                "split": r.split,
                "lat": m.lat,
                "lon": m.lon,
                "timesteps": len(m.timestamps),
                "height": m.height,
                "width": m.width,
                "gaps": len(m.gaps),
                "mean_cloud_fraction": float(np.mean(cf)) if cf else 0.0,
            }
        )
    write_csv_log(out / "scenes.csv", rows, list(rows[0]))


# ---------------------------------------------------------------- despeckle


def _despeckle_pairs(records, size):
    pairs = []
    for r in records:
        cube, clean = r.scene.cube, r.scene.clean_sar
        T, H, W, _ = cube.values.shape
        tile = min(size, H, W)
        for t in range(T):
            for k, band in enumerate(("VV", "VH")):
                noisy = cube.band(band)[t]
                for y, x in tile_origins(H, W, tile, tile):
                    pairs.append((noisy[y : y + tile, x : x + tile], clean[t, y : y + tile, x : x + tile, k]))
    return pairs


def _subsample(pairs, n, seed):
    if len(pairs) <= n:
        return pairs
    idx = np.sort(np.random.default_rng(seed).choice(len(pairs), n, replace=False))
    return [pairs[i] for i in idx]


def stage_despeckle(cfg, records, out: Path) -> None:
    s = cfg.despeckle
    seed = sub_seed(cfg.seed, "despeckle")
    train = _subsample(_despeckle_pairs([r for r in records if r.split == "train"], s.patch_size), s.max_pairs, seed)
    val = _subsample(_despeckle_pairs([r for r in records if r.split == "val"], s.patch_size), s.max_pairs, seed + 1)
    config = dsp.DespeckleConfig(
        epochs=s.epochs,
        batch_size=s.batch_size,
        learning_rate=s.learning_rate,
        seed=seed,
        weights=dsp.SpeckleLossWeights(s.alpha1, s.beta1, s.gamma1),
        model=dsp.DespeckleModelSpec(depth=s.depth, channels=s.channels),
    )
    model, history = dsp.train_despeckler(train, config)
    dsp.save_despeckler(out / "despeckler", model, history)
    summary = {"train_pairs": len(train), "val_pairs": len(val), "psnr_gain_db": dsp.psnr_gain(model, val)}
    (out / "metrics.json").write_text(json.dumps(fixed(summary), indent=2, sort_keys=True) + "\n")
    (out / "sar").mkdir()
    for r in records:
        sar = r.scene.cube.values[..., :2]
        filtered = np.stack([dsp.despeckle(model, sar[..., k]) for k in range(2)], axis=-1)
        (out / "sar" / f"{r.name}.raw").write_bytes(np.ascontiguousarray(filtered, dtype="<f4").tobytes())


# ---------------------------------------------------------------- segment


def _model_cube(r: SceneRecord, root: Path):
    cube = r.scene.cube
    sar_path = root / "despeckle" / "sar" / f"{r.name}.raw"
    if sar_path.is_file():
        T, H, W, B = cube.values.shape
        sar = np.frombuffer(sar_path.read_bytes(), dtype="<f4").reshape(T, H, W, 2)
        values = np.array(cube.values)
        values[..., :2] = np.maximum(sar, 0.0)
        cube = cube.with_values(values)
    return normalize(harmonize_cube(cube))


def stage_segment(cfg, records, out: Path) -> None:
    s = cfg.segment
    root = cfg.path("output_dir")
    cubes = {r.name: _model_cube(r, root) for r in records}

    def dataset(split):
        chosen = [r for r in records if r.split == split]
        return seg.patch_dataset([cubes[r.name] for r in chosen], [r.scene.truth_masks for r in chosen], s.patch_size, s.stride)

    config = seg.SegConfig(
        epochs=s.epochs,
        batch_size=s.batch_size,
        learning_rate=s.learning_rate,
        seed=sub_seed(cfg.seed, "segment"),
        threshold=s.threshold,
        weights=seg.SegLossWeights(s.alpha2, s.beta2, s.epsilon),
        depth=s.depth,
        base_channels=s.base_channels,
    )
    rows = seg.ablation(dataset("train"), dataset("val"), config, s.combos, run_dir=out)
    seg.write_ablation_csv(rows, out / "ablation.csv")
    chosen = seg.FULL_COMBO if seg.FULL_COMBO in s.combos else max(rows, key=lambda r: r["iou"])["combo"]
    model = seg.load_segmenter(out / "segmenter" / chosen)
    (out / "masks").mkdir()
    scores = []
    for r in records:
        cube = cubes[r.name]
        prob = np.stack(
            [seg.predict_mask(model, np.moveaxis(frame, -1, 0), cube.manifest.bands, s.stride) for frame in cube.values]
        )
        mask = seg.binarize(prob, s.threshold)
        (out / "masks" / f"{r.name}_prob.raw").write_bytes(np.ascontiguousarray(prob, dtype="<f4").tobytes())
        (out / "masks" / f"{r.name}_mask.raw").write_bytes(np.ascontiguousarray(mask, dtype=np.uint8).tobytes())
        rep = metrics.weighted_report(mask, r.scene.truth_masks)
        scores.append({"scene": r.name, "split": r.split, "precision": rep.precision, "recall": rep.recall, "iou": rep.iou})
    write_csv_log(out / "inference.csv", scores, ["scene", "split", "precision", "recall", "iou"])
    (out / "model.json").write_text(json.dumps({"combo": chosen}) + "\n")


def _read_maps(root: Path, r: SceneRecord, kind: str, stage: str):
    path = root / "segment" / "masks" / f"{r.name}_{kind}.raw"
    if not path.is_file():
        raise FileNotFoundError(f"{stage} needs segmentation outputs; missing {path}")
    T, H, W, _ = r.scene.cube.values.shape
    dtype = "<f4" if kind == "prob" else np.uint8
    return np.frombuffer(path.read_bytes(), dtype=dtype).reshape(T, H, W).copy()


# ---------------------------------------------------------------- forecast


def stage_forecast(cfg, records, out: Path) -> None:
    s = cfg.forecast
    root = cfg.path("output_dir")
    maps = {r.name: _read_maps(root, r, "prob", "forecast") for r in records}
    samples = {
        split: [x for r in records if r.split == split for x in fc.build_sequences(maps[r.name], r.dates, s.history, r.location)]
        for split in ("train", "val")
    }
    config = fc.ForecastConfig(
        epochs=s.epochs,
        batch_size=s.batch_size,
        learning_rate=s.learning_rate,
        seed=sub_seed(cfg.seed, "forecast"),
        weights=fc.ForecastLossWeights(s.alpha3, s.beta3, s.gamma3),
    )
    rows = fc.compare_families(samples["train"], samples["val"], config, s.families, s.hidden, s.depth, run_dir=out)
    fc.write_comparison_csv(rows, out / "comparison.csv")
    best = next(r["family"] for r in rows if r["family"] != "persistence")
    model = fc.load_forecaster(out / "forecaster" / best)
    (out / "next").mkdir()
    for r in records:
        nxt = fc.predict_next(model, maps[r.name][-s.history :])
        (out / "next" / f"{r.name}.raw").write_bytes(np.ascontiguousarray(nxt, dtype="<f4").tobytes())
    (out / "model.json").write_text(json.dumps({"family": best}) + "\n")


# ---------------------------------------------------------------- hydro


def stage_hydro(cfg, records, out: Path) -> None:
    s = cfg.hydro
    root = cfg.path("output_dir")
    (out / "series").mkdir()
    (out / "validation").mkdir()
    summary = {}
    threshold = cfg.segment.threshold
    for r in records:
        masks = _read_maps(root, r, "mask", "hydro")
        series = hydro.build_series(r.dates, masks, r.scene.dem, r.name)
        (out / "series" / f"{r.name}.csv").write_text(hydro.series_csv(series))
        truth = [(d, hydro.surface_area(m, r.scene.dem.pixel_area)) for d, m in zip(r.dates, r.scene.truth_masks)]
        rows = hydro.validate_against_ground(series, truth, s.tolerance_days)
        (out / "validation" / f"{r.name}.csv").write_text(hydro.validation_csv(rows))
        entry = {"split": r.split, "trend": None, "next": None}
        if len(series) >= 2 * s.seasonal_period:
            tr = hydro.trend(series, s.seasonal_period)
            entry["trend"] = {"slope_m3_per_step": tr.slope, "intercept_m3": tr.intercept, "period": tr.period}
        nxt_path = root / "forecast" / "next" / f"{r.name}.raw"
        if nxt_path.is_file():
            H, W = r.scene.dem.heights.shape
            prob = np.frombuffer(nxt_path.read_bytes(), dtype="<f4").reshape(H, W)
            mask = seg.binarize(prob, threshold)
            m = r.scene.cube.manifest
            entry["next"] = {
                "date": _add_months(m.timestamps[-1], m.cadence_months).isoformat(),
                "area_m2": hydro.surface_area(mask, r.scene.dem.pixel_area),
                "volume_m3": hydro.water_volume(mask, r.scene.dem),
            }
        summary[r.name] = entry
    (out / "table_v.csv").write_text(hydro.validation_csv(hydro.table_v_validation()))
    (out / "summary.json").write_text(json.dumps(fixed(summary), indent=2, sort_keys=True) + "\n")


STAGE_FUNCS = {
    "datacube": stage_datacube,
    "despeckle": stage_despeckle,
    "segment": stage_segment,
    "forecast": stage_forecast,
    "hydro": stage_hydro,
}


# ---------------------------------------------------------------- report


def _csv_rows(path: Path) -> list[dict]:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def _num(v: str):
    if v == "":
        return None
    try:
        return int(v)
    except ValueError:
        return float(v)


def _validation_rows(path: Path) -> list[dict]:
    return [{"date": r["date"], **{k: _num(r[k]) for k in r if k != "date"}} for r in _csv_rows(path)]


def build_report(cfg: RunConfig) -> dict:
    root = cfg.path("output_dir")
    settings = {k: v for k, v in cfg.to_dict().items() if k not in ("scenes_dir", "output_dir", "stages")}
    report = {"schema_version": SCHEMA_VERSION, "settings": settings}

    p = root / "despeckle" / "metrics.json"
    report["despeckle"] = json.loads(p.read_text()) if p.is_file() else None

    p = root / "segment" / "ablation.csv"
    report["ablation"] = [{"combo": r["combo"], **{k: _num(r[k]) for k in ("precision", "recall", "iou")}} for r in _csv_rows(p)] if p.is_file() else None

    p = root / "forecast" / "comparison.csv"
    if p.is_file():
        report["forecast"] = [
            {
                "family": r["family"],
                **{k: _num(r[k]) for k in ("mse", "ssim", "psnr", "rank")},
                "psnr_infinite": r["psnr_infinite"] == "True",
            }
            for r in _csv_rows(p)
        ]
    else:
        report["forecast"] = None

    hdir = root / "hydro"
    if (hdir / "summary.json").is_file():
        summary = json.loads((hdir / "summary.json").read_text())
        report["hydro_series"] = {
            name: {**entry, "records": _validation_rows(hdir / "series" / f"{name}.csv")} for name, entry in sorted(summary.items())
        }
        report["validation"] = {
            "synthetic": {name: _validation_rows(hdir / "validation" / f"{name}.csv") for name in sorted(summary)},
            "table_v": _validation_rows(hdir / "table_v.csv"),
        }
    else:
        report["hydro_series"] = None
        report["validation"] = None
    return fixed(report)


def write_manifest(root: Path) -> dict:
    """List every file under ``root`` (except the manifest itself) with size and SHA-256."""
    files = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != MANIFEST:
            files[p.relative_to(root).as_posix()] = {"bytes": p.stat().st_size, "sha256": hashlib.sha256(p.read_bytes()).hexdigest()}
    manifest = {"schema_version": SCHEMA_VERSION, "files": files}
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def run_pipeline(cfg: RunConfig, stages=None) -> Path:
    """Run the selected stages in order. Raises :class:`StageError` naming the failing stage;
    outputs written before the failure stay on disk and are listed in the manifest."""
    wanted = set(stages or cfg.stages)
    root = cfg.path("output_dir")
    root.mkdir(parents=True, exist_ok=True)
    try:
        try:
            records = load_scenes(cfg)
        except Exception as exc:
            raise StageError("datacube", str(exc)) from exc
        for name in STAGES:
            if name not in wanted:
                continue
            out = root / name
            if out.exists():
                shutil.rmtree(out)
            out.mkdir()
            log.info("stage %s", name)
            try:
                STAGE_FUNCS[name](cfg, records, out)
            except Exception as exc:
                raise StageError(name, str(exc)) from exc
        report = build_report(cfg)
        (root / REPORT).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    finally:
        write_manifest(root)
    return root


# ---------------------------------------------------------------- figures and tables


def make_report(cfg: RunConfig) -> Path:
    """Volume curves, CSV tables and a text summary under ``<output_dir>/report``."""
    root = cfg.path("output_dir")
    needed = [root / REPORT, root / "segment" / "ablation.csv", root / "forecast" / "comparison.csv", root / "hydro" / "summary.json", root / "hydro" / "table_v.csv"]
    missing = [str(p) for p in needed if not p.is_file()]
    if not missing:
        summary = json.loads((root / "hydro" / "summary.json").read_text())
        for name in sorted(summary):
            for sub in ("series", "validation"):
                p = root / "hydro" / sub / f"{name}.csv"
                if not p.is_file():
                    missing.append(str(p))
    if missing:
        raise FileNotFoundError("missing inputs:\n  " + "\n  ".join(missing))

    out = root / "report"
    if out.exists():
        shutil.rmtree(out)
    out.mkdir()
    shutil.copyfile(root / "segment" / "ablation.csv", out / "ablation.csv")
    shutil.copyfile(root / "forecast" / "comparison.csv", out / "forecast_comparison.csv")
    shutil.copyfile(root / "hydro" / "table_v.csv", out / "table_v.csv")

    val_rows, series_rows, lines = [], [], []
    report = json.loads((root / REPORT).read_text())
    lines.append(f"hydrocube report (schema {report['schema_version']})")
    lines.append("")
    lines.append("Band-combination ablation (validation, support-weighted):")
    for r in report["ablation"]:
        lines.append(f"  {r['combo']:<14} P={r['precision']:.4f} R={r['recall']:.4f} IoU={r['iou']:.4f}")
    lines.append("")
    lines.append("Next-frame forecast (validation):")
    for r in report["forecast"]:
        psnr = "inf" if r["psnr_infinite"] else f"{r['psnr']:.3f}"
        lines.append(f"  {r['rank']}. {r['family']:<12} MSE={r['mse']:.6f} SSIM={r['ssim']:.4f} PSNR={psnr}")
    lines.append("")
    lines.append("Water volume per basin:")
    for name in sorted(summary):
        series = hydro.read_series_csv(root / "hydro" / "series" / f"{name}.csv", name)
        hydro.plot_series(series, out / f"volume_{name}.png")
        for rec in series.records:
            series_rows.append({"basin": name, "date": rec.date.isoformat(), "area_m2": rec.area_m2, "volume_m3": rec.volume_m3, "pixels": rec.pixels})
        for r in _csv_rows(root / "hydro" / "validation" / f"{name}.csv"):
            val_rows.append({"basin": name, **r})
        entry = summary[name]
        slope = "n/a" if entry["trend"] is None else f"{entry['trend']['slope_m3_per_step']:.1f} m3/step"
        lines.append(f"  {name}: {len(series)} dates, mean volume {series.volumes.mean():.1f} m3, trend {slope}")
    write_csv_log(out / "hydro_series.csv", series_rows, ["basin", "date", "area_m2", "volume_m3", "pixels"])
    write_csv_log(out / "validation.csv", val_rows, ["basin", "date", "gt_area_m2", "measured_area_m2", "difference_m2"])
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    write_manifest(root)
    return out

