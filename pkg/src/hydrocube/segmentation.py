"""U-Net water segmentation trained with binary cross-entropy plus a per-pixel gap term."""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from hydrocube import metrics
from hydrocube._training import (
    TrainingError,
    check_finite,
    load_state,
    minibatches,
    save_checkpoint,
    seed_everything,
    write_csv_log,
)
from hydrocube.datacube import BANDS, DataCube, tile_origins

log = logging.getLogger(__name__)

COMBOS = {
    "S1": ("VV", "VH"),
    "S2": ("R", "G", "B", "NIR"),
    "S1+Slo+El": ("VV", "VH", "SLOPE", "ELEVATION"),
    "S2+Slo+El": ("R", "G", "B", "NIR", "SLOPE", "ELEVATION"),
    "S1+S2+Slo+El": ("VV", "VH", "R", "G", "B", "NIR", "SLOPE", "ELEVATION"),
}
FULL_COMBO = "S1+S2+Slo+El"
EPS = 1e-7


def combo_bands(combo: str) -> tuple[str, ...]:
    try:
        return COMBOS[combo]
    except KeyError:
        raise ValueError(f"unknown band combination {combo!r}; choose from {list(COMBOS)}") from None


@dataclass(frozen=True)
class SegLossWeights:
    alpha2: float = 1.0
    beta2: float = 0.5
    epsilon: float = EPS

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if min(self.alpha2, self.beta2) < 0 or self.alpha2 + self.beta2 <= 0:
            raise ValueError("loss weights must be non-negative and not both zero")


def _tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def _pair(pred, target):
    pred, target = _tensor(pred), _tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return pred, target.to(pred.dtype)


def bce(pred, target, eps: float = EPS) -> torch.Tensor:
    pred, target = _pair(pred, target)
    p = pred.clamp(eps, 1 - eps)
    return -(target * torch.log(p) + (1 - target) * torch.log(1 - p)).mean()


def gap_term(pred, target, epsilon: float = EPS) -> torch.Tensor:
    """Mean of ``(p - y)^2 / ((p + y)^2 + eps)``."""
    pred, target = _pair(pred, target)
    return ((pred - target) ** 2 / ((pred + target) ** 2 + epsilon)).mean()


def seg_loss(pred, target, weights: SegLossWeights = SegLossWeights()) -> torch.Tensor:
    total = weights.alpha2 * bce(pred, target, weights.epsilon)
    if weights.beta2:
        total = total + weights.beta2 * gap_term(pred, target, weights.epsilon)
    return total


@dataclass(frozen=True)
class UNetSpec:
    bands: tuple[str, ...] = COMBOS[FULL_COMBO]
    depth: int = 4
    base_channels: int = 32
    patch_size: int = 64

    def __post_init__(self):
        object.__setattr__(self, "bands", tuple(self.bands))
        bad = [b for b in self.bands if b not in BANDS]
        if bad or not self.bands:
            raise ValueError(f"invalid input bands {self.bands}")
        if self.depth < 1 or self.patch_size % (2**self.depth):
            raise ValueError(f"patch size {self.patch_size} not divisible by 2**{self.depth}")


def _double_conv(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    def __init__(self, spec: UNetSpec = UNetSpec()):
        super().__init__()
        self.spec = spec
        widths = [spec.base_channels * 2**i for i in range(spec.depth + 1)]
        self.down = nn.ModuleList()
        cin = len(spec.bands)
        for w in widths[:-1]:
            self.down.append(_double_conv(cin, w))
            cin = w
        self.bottom = _double_conv(widths[-2], widths[-1])
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for w_hi, w in zip(widths[:0:-1], widths[-2::-1]):
            self.up.append(nn.ConvTranspose2d(w_hi, w, 2, stride=2))
            self.dec.append(_double_conv(2 * w, w))
        self.head = nn.Conv2d(widths[0], 1, 1)

    def forward(self, x):
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        x = self.bottom(x)
        for up, dec, skip in zip(self.up, self.dec, reversed(skips)):
            x = dec(torch.cat([up(x), skip], dim=1))
        return torch.sigmoid(self.head(x))[:, 0]


@dataclass
class SegDataset:
    """Patches ``(N, B, H, W)`` over ``bands`` with ``(N, H, W)`` binary targets."""

    images: np.ndarray
    masks: np.ndarray
    bands: tuple[str, ...] = BANDS
    locations: list = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.masks = np.asarray(self.masks, dtype=np.float32)
        if self.images.ndim != 4 or self.images.shape[1] != len(self.bands):
            raise ValueError(f"images must be (N, {len(self.bands)}, H, W), got {self.images.shape}")
        if self.masks.shape != (self.images.shape[0], *self.images.shape[2:]):
            raise ValueError("masks must be (N, H, W) matching images")
        if not self.locations:
            self.locations = [None] * len(self.images)

    def __len__(self):
        return len(self.images)

    def select(self, bands: Sequence[str]) -> np.ndarray:
        missing = [b for b in bands if b not in self.bands]
        if missing:
            raise ValueError(f"dataset lacks bands {missing}")
        return self.images[:, [self.bands.index(b) for b in bands]]

    def subset(self, idx) -> "SegDataset":
        idx = np.asarray(idx, dtype=int)
        return SegDataset(self.images[idx], self.masks[idx], self.bands, [self.locations[i] for i in idx])


def patch_dataset(cubes: Sequence[DataCube], masks: Sequence[np.ndarray], size: int = 64, stride: int | None = None, timesteps=None) -> SegDataset:
    """Cut normalized cubes and their ``(T, H, W)`` truth masks into training patches."""
    images, targets, locs = [], [], []
    for cube, m in zip(cubes, masks):
        T, H, W, _ = cube.values.shape
        steps = range(T) if timesteps is None else timesteps
        for t in steps:
            for r, c in tile_origins(H, W, size, stride or size):
                images.append(np.moveaxis(cube.values[t, r : r + size, c : c + size], -1, 0))
                targets.append(m[t, r : r + size, c : c + size])
                locs.append(cube.location)
    if not images:
        raise ValueError("no patches produced")
    return SegDataset(np.stack(images), np.stack(targets), tuple(cubes[0].manifest.bands), locs)


@dataclass
class SegConfig:
    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 1e-3
    seed: int = 0
    val_fraction: float = 0.2
    threshold: float = 0.5
    weights: SegLossWeights = field(default_factory=SegLossWeights)
    depth: int = 4
    base_channels: int = 32


def _split_by_location(ds: SegDataset, fraction: float, seed: int):
    locs = sorted({l for l in ds.locations}, key=repr)
    if len(locs) < 2:
        idx = np.random.default_rng(seed).permutation(len(ds))
        n_val = max(1, int(round(fraction * len(ds))))
        return ds.subset(idx[n_val:]), ds.subset(idx[:n_val])
    order = np.random.default_rng(seed).permutation(len(locs))
    n_val = min(max(1, int(round(fraction * len(locs)))), len(locs) - 1)
    val_locs = {locs[i] for i in order[:n_val]}
    in_val = np.array([l in val_locs for l in ds.locations])
    return ds.subset(np.flatnonzero(~in_val)), ds.subset(np.flatnonzero(in_val))


def _predict_batches(model, x, batch=16):
    model.eval()
    with torch.no_grad():
        return torch.cat([model(x[i : i + batch]) for i in range(0, len(x), batch)]).numpy()


def evaluate(model: UNet, images: np.ndarray, masks: np.ndarray, threshold: float = 0.5) -> metrics.WeightedReport:
    """Support-weighted report over all pixels of a patch set."""
    prob = _predict_batches(model, torch.from_numpy(np.ascontiguousarray(images)))
    counts = metrics.confusion(binarize(prob, threshold), masks.astype(bool))
    return metrics.report_from_counts(counts)


def train_segmenter(dataset: SegDataset, combo: str = FULL_COMBO, config: SegConfig = SegConfig(), val: SegDataset | None = None):
    """Train one U-Net on ``combo``'s bands; the returned model is the best epoch by validation IoU."""
    bands = combo_bands(combo)
    if len(dataset) == 0:
        raise TrainingError("empty dataset")
    if val is None:
        dataset, val = _split_by_location(dataset, config.val_fraction, config.seed)
    x = torch.from_numpy(np.ascontiguousarray(dataset.select(bands)))
    y = torch.from_numpy(dataset.masks)
    vx = np.ascontiguousarray(val.select(bands))
    rng = seed_everything(config.seed)
    spec = UNetSpec(bands, config.depth, config.base_channels, dataset.images.shape[-1])
    model = UNet(spec)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    best_iou, best_state, history = -1.0, None, []
    for epoch in range(1, config.epochs + 1):
        model.train()
        total = 0.0
        for idx in minibatches(len(x), config.batch_size, rng):
            idx = torch.from_numpy(idx)
            loss = seg_loss(model(x[idx]), y[idx], config.weights)
            check_finite(loss.item(), epoch, "segmentation loss")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        rep = evaluate(model, vx, val.masks, config.threshold)
        row = {
            "epoch": epoch,
            "loss": total / len(x),
            "precision": rep.precision,
            "recall": rep.recall,
            "iou": rep.iou,
            "iou_water": rep.water.iou,
        }
        history.append(row)
        log.info("segment[%s] epoch %d loss %.4f val IoU %.4f", combo, epoch, row["loss"], rep.iou)
        if rep.iou > best_iou:
            best_iou, best_state = rep.iou, copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    return model, history


def _prepare_frame(model: UNet, frame, bands):
    frame = np.asarray(frame, dtype=np.float32)
    if frame.ndim != 3:
        raise ValueError(f"frame must be (C, H, W), got {frame.shape}")
    if bands is not None:
        bands = tuple(bands)
        missing = [b for b in model.spec.bands if b not in bands]
        if missing:
            raise ValueError(f"frame lacks model bands {missing}")
        frame = frame[[bands.index(b) for b in model.spec.bands]]
    elif frame.shape[0] != len(model.spec.bands):
        raise ValueError(f"frame has {frame.shape[0]} channels, model expects {model.spec.bands}")
    return frame


def predict_mask(model: UNet, frame, bands: Sequence[str] | None = None, stride: int | None = None, return_seam: bool = False):
    """Per-pixel water probability for a ``(C, H, W)`` frame.

    Frames larger than the training patch are tiled at half-patch stride and
    overlapping predictions averaged. With ``return_seam`` the largest mean
    absolute disagreement between horizontally or vertically adjacent tiles
    over their overlap is returned as well.
    """
    frame = _prepare_frame(model, frame, bands)
    tile = model.spec.patch_size
    stride = stride or tile // 2
    _, H, W = frame.shape
    pad_h, pad_w = max(0, tile - H), max(0, tile - W)
    if pad_h or pad_w:
        frame = np.pad(frame, ((0, 0), (0, pad_h), (0, pad_w)), mode="reflect")
    _, Hp, Wp = frame.shape
    origins = tile_origins(Hp, Wp, tile, stride)
    batch = torch.from_numpy(np.stack([frame[:, r : r + tile, c : c + tile] for r, c in origins]))
    preds = _predict_batches(model, batch).astype(np.float64)
    acc = np.zeros((Hp, Wp))
    cnt = np.zeros((Hp, Wp))
    for (r, c), p in zip(origins, preds):
        acc[r : r + tile, c : c + tile] += p
        cnt[r : r + tile, c : c + tile] += 1
    prob = (acc / cnt)[:H, :W]
    if not return_seam:
        return prob
    return prob, _seam_disagreement(origins, preds, tile)


def _seam_disagreement(origins, preds, tile) -> float:
    worst = 0.0
    pos = {o: i for i, o in enumerate(origins)}
    for (r, c), i in pos.items():
        for (r2, c2), j in pos.items():
            if (r2 == r and 0 < c2 - c < tile) or (c2 == c and 0 < r2 - r < tile):
                dr, dc = r2 - r, c2 - c
                a = preds[i][dr:, dc:]
                b = preds[j][: tile - dr, : tile - dc]
                worst = max(worst, float(np.abs(a - b).mean()))
    return worst


def binarize(prob, threshold: float = 0.5) -> np.ndarray:
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return (np.asarray(prob) >= threshold).astype(np.uint8)


def ndwi(green, nir) -> tuple[np.ndarray, np.ndarray]:
    """(G - NIR) / (G + NIR) and a flag for pixels with a zero denominator."""
    green = np.asarray(green, dtype=np.float64)
    nir = np.asarray(nir, dtype=np.float64)
    den = green + nir
    invalid = den == 0
    index = np.divide(green - nir, den, out=np.zeros_like(den), where=~invalid)
    return index, invalid


def ndwi_baseline(green, nir, threshold: float = 0.0) -> np.ndarray:
    index, invalid = ndwi(green, nir)
    if invalid.any():
        log.debug("ndwi: %d pixels with zero denominator set to land", int(invalid.sum()))
    return ((index > threshold) & ~invalid).astype(np.uint8)


def ablation(train: SegDataset, val: SegDataset, config: SegConfig = SegConfig(), combos: Sequence[str] = tuple(COMBOS), run_dir=None) -> list[dict]:
    """Train one model per band combination; rows hold the best validation scores."""
    rows = []
    for combo in combos:
        model, history = train_segmenter(train, combo, config, val=val)
        best = max(history, key=lambda r: r["iou"])
        rows.append({"combo": combo, "precision": best["precision"], "recall": best["recall"], "iou": best["iou"]})
        if run_dir is not None:
            save_segmenter(Path(run_dir) / "segmenter" / combo, model, history)
    return rows


def write_ablation_csv(rows: list[dict], path) -> None:
    write_csv_log(path, rows, ["combo", "precision", "recall", "iou"])


def save_segmenter(directory, model: UNet, history=None) -> None:
    save_checkpoint(directory, model, {"kind": "unet", **asdict(model.spec)})
    if history is not None:
        write_csv_log(Path(directory) / "metrics_log.csv", history, ["epoch", "loss", "precision", "recall", "iou", "iou_water"])


def load_segmenter(directory) -> UNet:
    spec, state = load_state(directory)
    spec.pop("kind", None)
    model = UNet(UNetSpec(**spec))
    model.load_state_dict(state)
    model.eval()
    return model


def read_ablation_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {"combo": r["combo"], **{k: float(r[k]) for k in ("precision", "recall", "iou")}}
            for r in csv.DictReader(fh)
        ]
