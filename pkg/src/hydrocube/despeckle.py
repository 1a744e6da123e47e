"""Residual SAR despeckling network and its MSE + SSIM + TV training loss."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from hydrocube import _torch_ops as tops
from hydrocube import kernels, metrics
from hydrocube._training import (
    TrainingError,
    check_finite,
    load_state,
    minibatches,
    save_checkpoint,
    seed_everything,
    write_csv_log,
)

log = logging.getLogger(__name__)

SSIM_WINDOW = 7


@dataclass(frozen=True)
class SpeckleLossWeights:
    alpha1: float = 1.0
    beta1: float = 0.5
    gamma1: float = 1e-4

    def __post_init__(self):
        w = (self.alpha1, self.beta1, self.gamma1)
        if min(w) < 0 or max(w) <= 0:
            raise ValueError(f"loss weights must be non-negative with one positive: {w}")


@dataclass(frozen=True)
class DespeckleModelSpec:
    depth: int = 6
    channels: int = 32
    kernel_size: int = 3

    def __post_init__(self):
        if self.depth < 1 or self.channels < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"invalid despeckler spec: {self}")


@dataclass
class DespeckleConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    weights: SpeckleLossWeights = field(default_factory=SpeckleLossWeights)
    model: DespeckleModelSpec = field(default_factory=DespeckleModelSpec)


def ssim_constants(k1: float = 0.01, k2: float = 0.03, dynamic_range: float = 1.0) -> tuple[float, float]:
    return (k1 * dynamic_range) ** 2, (k2 * dynamic_range) ** 2


def ssim(a, b, window: int = SSIM_WINDOW, k1: float = 0.01, k2: float = 0.03, dynamic_range: float = 1.0) -> float:
    """Mean SSIM over uniform ``window x window`` neighbourhoods with reflect padding."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    if dynamic_range <= 0:
        raise ValueError("dynamic range must be positive")
    c1, c2 = ssim_constants(k1, k2, dynamic_range)
    return kernels.ssim_mean(a, b, window, c1, c2)


def tv_penalty(image) -> float:
    """Isotropic total variation; the last row/column contribute their single available difference."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or min(image.shape) < 2:
        raise ValueError(f"tv_penalty needs an H x W image with H, W >= 2, got {image.shape}")
    return kernels.tv_penalty(image)


def speckle_loss(pred, target, weights: SpeckleLossWeights = SpeckleLossWeights()) -> torch.Tensor:
    """Batch mean of ``a*MSE + b*(1 - SSIM) + g*TV(pred)``.

    SSIM enters as a dissimilarity so that every term is minimised at a perfect match.
    """
    pred = tops.as_batch(pred)
    target = tops.as_batch(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    c1, c2 = ssim_constants()
    total = weights.alpha1 * tops.mse(pred, target)
    if weights.beta1:
        total = total + weights.beta1 * (1.0 - tops.ssim(pred, target, SSIM_WINDOW, c1, c2))
    if weights.gamma1:
        total = total + weights.gamma1 * tops.tv(pred)
    return total.mean()


class _ResBlock(nn.Module):
    def __init__(self, channels, k):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, k, padding=k // 2)
        self.conv2 = nn.Conv2d(channels, channels, k, padding=k // 2)
        self.act = nn.ReLU()

    def forward(self, x):
        return self.act(x + self.conv2(self.act(self.conv1(x))))


class ResidualDespeckler(nn.Module):
    """ResNet trunk predicting the speckle component, removed by a subtraction skip."""

    def __init__(self, spec: DespeckleModelSpec = DespeckleModelSpec(), zero_head: bool = False):
        super().__init__()
        self.spec = spec
        k = spec.kernel_size
        self.stem = nn.Sequential(nn.Conv2d(1, spec.channels, k, padding=k // 2), nn.ReLU())
        self.blocks = nn.Sequential(*[_ResBlock(spec.channels, k) for _ in range(spec.depth)])
        self.head = nn.Conv2d(spec.channels, 1, k, padding=k // 2)
        if zero_head:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def noise(self, x):
        # unit-mean speckle leaves a zero-mean residual; centring it keeps
        # each frame's mean backscatter unchanged
        n = self.head(self.blocks(self.stem(x)))
        return n - n.mean(dim=(-2, -1), keepdim=True)

    def forward(self, x):
        return x - self.noise(x)


def _stack_pairs(pairs):
    if len(pairs) == 0:
        raise TrainingError("empty training set")
    noisy = np.stack([np.asarray(n, dtype=np.float32) for n, _ in pairs])
    clean = np.stack([np.asarray(c, dtype=np.float32) for _, c in pairs])
    if noisy.shape != clean.shape or noisy.ndim != 3:
        raise ValueError("pairs must be equal-shape (H, W) rasters")
    return torch.from_numpy(noisy[:, None]), torch.from_numpy(clean[:, None])


def train_despeckler(pairs, config: DespeckleConfig = DespeckleConfig()):
    """Fit a :class:`ResidualDespeckler` on ``(noisy, clean)`` raster pairs.

    Returns the model and a per-epoch log of mean loss terms.
    """
    noisy, clean = _stack_pairs(pairs)
    rng = seed_everything(config.seed)
    model = ResidualDespeckler(config.model)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    w = config.weights
    c1, c2 = ssim_constants()
    history = []
    for epoch in range(config.epochs + 1):
        # epoch 0 records the untrained loss without updating
        model.train(epoch > 0)
        sums = np.zeros(4)
        for idx in minibatches(len(noisy), config.batch_size, rng):
            idx = torch.from_numpy(idx)
            x, y = noisy[idx], clean[idx]
            with torch.set_grad_enabled(epoch > 0):
                out = model(x)
                terms = (
                    tops.mse(out, y).mean(),
                    1.0 - tops.ssim(out, y, SSIM_WINDOW, c1, c2).mean(),
                    tops.tv(out).mean(),
                )
                loss = w.alpha1 * terms[0] + w.beta1 * terms[1] + w.gamma1 * terms[2]
            check_finite(loss.item(), epoch, "despeckle loss")
            if epoch > 0:
                opt.zero_grad()
                loss.backward()
                opt.step()
            sums += len(idx) * np.array([t.item() for t in (*terms, loss)])
        mean = sums / len(noisy)
        history.append({"epoch": epoch, "mse": float(mean[0]), "ssim": float(1.0 - mean[1]), "tv": float(mean[2]), "total": float(mean[3])})
        log.info("despeckle epoch %d loss %.6g", epoch, mean[3])
    model.eval()
    return model, history


def despeckle(model: ResidualDespeckler, sar) -> np.ndarray:
    """Filter an ``(H, W)`` raster or a ``(T, H, W)`` stack frame by frame."""
    sar = np.asarray(sar)
    if sar.ndim not in (2, 3):
        raise ValueError(f"expected (H, W) or (T, H, W), got {sar.shape}")
    frames = sar[None] if sar.ndim == 2 else sar
    x = torch.from_numpy(np.ascontiguousarray(frames, dtype=np.float32))[:, None]
    model.eval()
    with torch.no_grad():
        out = torch.cat([model(x[i : i + 8]) for i in range(0, len(x), 8)]).numpy()[:, 0]
    return out[0] if sar.ndim == 2 else out


def psnr_gain(model, pairs) -> float:
    """Mean PSNR(output, clean) - PSNR(noisy, clean) over ``pairs``."""
    gains = []
    for noisy, clean in pairs:
        gains.append(metrics.psnr(despeckle(model, noisy), clean) - metrics.psnr(noisy, clean))
    return float(np.mean(gains))


def save_despeckler(directory, model: ResidualDespeckler, history=None) -> None:
    directory = Path(directory)
    save_checkpoint(directory, model, {"kind": "despeckler", **asdict(model.spec)})
    if history is not None:
        write_csv_log(directory / "loss_log.csv", history, ["epoch", "mse", "ssim", "tv", "total"])


def load_despeckler(directory) -> ResidualDespeckler:
    spec, state = load_state(directory)
    spec.pop("kind", None)
    model = ResidualDespeckler(DespeckleModelSpec(**spec))
    model.load_state_dict(state)
    model.eval()
    return model
