"""Next-frame water-mask forecasting from a fixed-length history of probability maps.

Three families map ``(history, H, W)`` to one ``(H, W)`` frame in [0, 1]:
a ConvLSTM, a bidirectional ConvLSTM and a time-distributed CNN.
"""

from __future__ import annotations

import copy
import datetime as dt
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from hydrocube import _torch_ops as tops
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
from hydrocube.despeckle import SSIM_WINDOW, ssim, ssim_constants

log = logging.getLogger(__name__)

FAMILIES = ("ConvLSTM", "Bi-ConvLSTM", "TD-CNN")
HISTORY = 7


@dataclass(frozen=True)
class ForecastLossWeights:
    alpha3: float = 1.0
    beta3: float = 0.5
    gamma3: float = 0.1

    def __post_init__(self):
        w = (self.alpha3, self.beta3, self.gamma3)
        if min(w) < 0 or sum(w) <= 0:
            raise ValueError(f"loss weights must be non-negative with a positive sum: {w}")


@dataclass(frozen=True)
class ForecastModelSpec:
    family: str = "TD-CNN"
    hidden: int = 16
    kernel_size: int = 3
    depth: int = 1
    history: int = HISTORY

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}; choose from {FAMILIES}")
        if self.hidden < 1 or self.depth < 1 or self.kernel_size % 2 == 0 or self.history < 1:
            raise ValueError(f"invalid forecaster spec: {self}")


@dataclass(frozen=True)
class SequenceSample:
    history: np.ndarray
    target: np.ndarray
    location: tuple | None = None
    target_date: dt.date | None = None


def tsl(frames) -> torch.Tensor:
    """Temporal smoothness: mean over consecutive pairs of the per-pixel mean squared step.

    ``frames`` is ``(T, H, W)`` or batched ``(N, T, H, W)``; batches are averaged.
    """
    f = frames if isinstance(frames, torch.Tensor) else torch.as_tensor(np.asarray(frames, dtype=np.float64))
    if f.dim() == 3:
        f = f[None]
    if f.dim() != 4 or f.shape[1] < 2:
        raise ValueError("tsl needs at least 2 frames")
    steps = (f[:, 1:] - f[:, :-1]) ** 2
    return steps.flatten(2).mean(dim=2).mean(dim=1).mean()


def forecast_loss(pred, target, context, weights: ForecastLossWeights = ForecastLossWeights()) -> torch.Tensor:
    """``a*MSE + b*(1 - SSIM) + g*TSL([context, pred])`` averaged over the batch."""
    pred = tops.as_batch(pred if isinstance(pred, torch.Tensor) else np.asarray(pred, dtype=np.float64))
    target = tops.as_batch(target if isinstance(target, torch.Tensor) else np.asarray(target, dtype=np.float64)).to(pred.dtype)
    context = tops.as_batch(context if isinstance(context, torch.Tensor) else np.asarray(context, dtype=np.float64)).to(pred.dtype)
    if pred.shape != target.shape or pred.shape != context.shape:
        raise ValueError("pred, target and context must share a shape")
    total = weights.alpha3 * tops.mse(pred, target).mean()
    if weights.beta3:
        c1, c2 = ssim_constants()
        total = total + weights.beta3 * (1.0 - tops.ssim(pred, target, SSIM_WINDOW, c1, c2).mean())
    if weights.gamma3:
        total = total + weights.gamma3 * tsl(torch.cat([context, pred], dim=1))
    return total


class ConvLSTMCell(nn.Module):
    def __init__(self, cin, hidden, k):
        super().__init__()
        self.hidden = hidden
        self.gates = nn.Conv2d(cin + hidden, 4 * hidden, k, padding=k // 2)

    def forward(self, x, state):
        h, c = state
        i, f, o, g = torch.chunk(self.gates(torch.cat([x, h], dim=1)), 4, dim=1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h, c


class _Recurrent(nn.Module):
    def __init__(self, spec):
        super().__init__()
        cells = [ConvLSTMCell(1 if i == 0 else spec.hidden, spec.hidden, spec.kernel_size) for i in range(spec.depth)]
        self.cells = nn.ModuleList(cells)

    def forward(self, x, reverse=False):
        n, t, h, w = x.shape
        hid = self.cells[0].hidden
        states = [(x.new_zeros(n, hid, h, w), x.new_zeros(n, hid, h, w)) for _ in self.cells]
        steps = range(t - 1, -1, -1) if reverse else range(t)
        for step in steps:
            inp = x[:, step : step + 1]
            for i, cell in enumerate(self.cells):
                states[i] = cell(inp, states[i])
                inp = states[i][0]
        return states[-1][0]


def _decoder(cin, hidden, k):
    return nn.Sequential(nn.Conv2d(cin, hidden, k, padding=k // 2), nn.ReLU(), nn.Conv2d(hidden, 1, 1))


class ConvLSTMForecaster(nn.Module):
    def __init__(self, spec: ForecastModelSpec):
        super().__init__()
        self.spec = spec
        self.rnn = _Recurrent(spec)
        self.decode = _decoder(spec.hidden, spec.hidden, spec.kernel_size)

    def forward(self, x):
        return torch.sigmoid(self.decode(self.rnn(x)))[:, 0]


class BiConvLSTMForecaster(nn.Module):
    def __init__(self, spec: ForecastModelSpec):
        super().__init__()
        self.spec = spec
        self.fwd = _Recurrent(spec)
        self.bwd = _Recurrent(spec)
        self.fuse = nn.Conv2d(2 * spec.hidden, spec.hidden, 1)
        self.decode = _decoder(spec.hidden, spec.hidden, spec.kernel_size)

    def forward(self, x):
        z = torch.relu(self.fuse(torch.cat([self.fwd(x), self.bwd(x, reverse=True)], dim=1)))
        return torch.sigmoid(self.decode(z))[:, 0]


class TDCNNForecaster(nn.Module):
    def __init__(self, spec: ForecastModelSpec):
        super().__init__()
        self.spec = spec
        k = spec.kernel_size
        layers = []
        for i in range(spec.depth):
            layers += [nn.Conv2d(1 if i == 0 else spec.hidden, spec.hidden, k, padding=k // 2), nn.ReLU()]
        self.encoder = nn.Sequential(*layers)
        self.decode = _decoder(spec.history * spec.hidden, spec.hidden, k)

    def forward(self, x):
        n, t, h, w = x.shape
        feats = self.encoder(x.reshape(n * t, 1, h, w)).reshape(n, t * self.spec.hidden, h, w)
        return torch.sigmoid(self.decode(feats))[:, 0]


_MODELS = {"ConvLSTM": ConvLSTMForecaster, "Bi-ConvLSTM": BiConvLSTMForecaster, "TD-CNN": TDCNNForecaster}


def build_model(spec: ForecastModelSpec) -> nn.Module:
    return _MODELS[spec.family](spec)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def build_sequences(maps, dates=None, history: int = HISTORY, location=None) -> list[SequenceSample]:
    """Every window of ``history`` consecutive frames followed by its next frame."""
    maps = np.asarray(maps, dtype=np.float32)
    out = []
    for t in range(history, len(maps)):
        out.append(
            SequenceSample(maps[t - history : t], maps[t], location, None if dates is None else dates[t])
        )
    return out


def _stack(samples: Sequence[SequenceSample], history: int):
    if len(samples) == 0:
        raise TrainingError("empty sample set")
    x = np.stack([s.history for s in samples]).astype(np.float32)
    y = np.stack([s.target for s in samples]).astype(np.float32)
    if x.shape[1] != history:
        raise ValueError(f"samples carry {x.shape[1]} history frames, spec expects {history}")
    return torch.from_numpy(x), torch.from_numpy(y)


@dataclass
class ForecastConfig:
    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 2e-3
    seed: int = 0
    weights: ForecastLossWeights = field(default_factory=ForecastLossWeights)


def evaluate_predictions(preds, targets) -> dict:
    """Validation scores through :mod:`hydrocube.metrics` (the single metric implementation)."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    return {
        "mse": metrics.mse(preds, targets),
        "ssim": float(np.mean([ssim(p, t) for p, t in zip(preds, targets)])),
        "psnr": metrics.psnr(preds, targets),
    }


def _predict(model, x, batch=16):
    model.eval()
    with torch.no_grad():
        return torch.cat([model(x[i : i + batch]) for i in range(0, len(x), batch)]).numpy()


def train_forecaster(samples, spec: ForecastModelSpec = ForecastModelSpec(), config: ForecastConfig = ForecastConfig(), val_samples=None):
    """Fit one forecaster; the returned model is the epoch with the lowest validation MSE."""
    x, y = _stack(samples, spec.history)
    vx, vy = _stack(val_samples, spec.history) if val_samples else (x, y)
    rng = seed_everything(config.seed)
    model = build_model(spec)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    best, best_state, history = np.inf, None, []
    for epoch in range(1, config.epochs + 1):
        model.train()
        total = 0.0
        for idx in minibatches(len(x), config.batch_size, rng):
            idx = torch.from_numpy(idx)
            xb = x[idx]
            loss = forecast_loss(model(xb), y[idx], xb[:, -1], config.weights)
            check_finite(loss.item(), epoch, "forecast loss")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        scores = evaluate_predictions(_predict(model, vx), vy.numpy())
        history.append({"epoch": epoch, "loss": total / len(x), **scores})
        log.info("forecast[%s] epoch %d val mse %.5f", spec.family, epoch, scores["mse"])
        if scores["mse"] < best:
            best, best_state = scores["mse"], copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    return model, history


def predict_next(model: nn.Module, history) -> np.ndarray:
    history = np.asarray(history, dtype=np.float32)
    expected = model.spec.history
    if history.ndim != 3 or history.shape[0] != expected:
        raise ValueError(f"expected ({expected}, H, W) history, got {history.shape}")
    return _predict(model, torch.from_numpy(history[None]))[0]


def persistence_baseline(history) -> np.ndarray:
    history = np.asarray(history)
    if history.ndim < 1 or len(history) == 0:
        raise ValueError("empty history")
    return history[-1].copy()


def compare_families(train, val, config: ForecastConfig = ForecastConfig(), families=FAMILIES, hidden: int = 16, depth: int = 1, run_dir=None) -> list[dict]:
    """Train each family and score it against persistence; rows sorted best-first by MSE."""
    vy = np.stack([s.target for s in val])
    rows = []
    for fam in families:
        spec = ForecastModelSpec(fam, hidden=hidden, depth=depth, history=val[0].history.shape[0])
        model, hist = train_forecaster(train, spec, config, val_samples=val)
        preds = _predict(model, torch.from_numpy(np.stack([s.history for s in val]).astype(np.float32)))
        rows.append({"family": fam, **evaluate_predictions(preds, vy), "params": parameter_count(model)})
        if run_dir is not None:
            save_forecaster(Path(run_dir) / "forecaster" / fam, model, hist)
    pers = np.stack([persistence_baseline(s.history) for s in val])
    rows.append({"family": "persistence", **evaluate_predictions(pers, vy), "params": 0})
    rows.sort(key=lambda r: r["mse"])
    for rank, row in enumerate(rows, 1):
        row["rank"] = rank
    return rows


def write_comparison_csv(rows, path) -> None:
    out = [{**r, **metrics.psnr_record(r["psnr"])} for r in rows]
    for r in out:
        r["psnr"] = "" if r["psnr"] is None else r["psnr"]
    write_csv_log(path, out, ["family", "mse", "ssim", "psnr", "psnr_infinite", "rank"])


def save_forecaster(directory, model, history=None) -> None:
    save_checkpoint(directory, model, {"kind": "forecaster", **asdict(model.spec)})
    if history is not None:
        write_csv_log(Path(directory) / "metrics_log.csv", history, ["epoch", "loss", "mse", "ssim", "psnr"])


def load_forecaster(directory) -> nn.Module:
    spec, state = load_state(directory)
    spec.pop("kind", None)
    model = build_model(ForecastModelSpec(**spec))
    model.load_state_dict(state)
    model.eval()
    return model
