"""Evaluation metrics shared by every stage.

Confusion-based scores treat water (1) as the positive class. Degenerate
denominators follow a fixed convention: a score is 1.0 when both the
prediction and the target sets it compares are empty, 0.0 otherwise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from hydrocube import kernels

log = logging.getLogger(__name__)

__all__ = [
    "ConfusionCounts",
    "ClassScores",
    "WeightedReport",
    "confusion",
    "precision_recall_iou",
    "weighted_report",
    "mse",
    "psnr",
    "psnr_record",
    "ssim",
]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def swapped(self) -> "ConfusionCounts":
        """Counts with the background class taken as positive."""
        return ConfusionCounts(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    iou: float
    support: int


@dataclass(frozen=True)
class WeightedReport:
    water: ClassScores
    background: ClassScores
    precision: float
    recall: float
    iou: float

    def as_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "iou": self.iou,
            "water": vars(self.water).copy(),
            "background": vars(self.background).copy(),
        }


def _check_binary(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype == bool:
        return x
    if not np.isin(x, (0, 1)).all():
        raise ValueError(f"{name} must be binary (0/1)")
    return x.astype(bool)


def confusion(pred, target) -> ConfusionCounts:
    """Pixel tallies of a binary prediction against a binary target."""
    pred = _check_binary(pred, "pred")
    target = _check_binary(target, "target")
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return ConfusionCounts(*kernels.confusion_counts(pred, target))


def _ratio(num: int, den: int, both_empty: bool, name: str) -> float:
    if den:
        return num / den
    log.debug("%s: empty denominator, convention %s", name, "1.0" if both_empty else "0.0")
    return 1.0 if both_empty else 0.0


def precision_recall_iou(counts: ConfusionCounts) -> tuple[float, float, float]:
    pred_empty = counts.tp + counts.fp == 0
    target_empty = counts.tp + counts.fn == 0
    both = pred_empty and target_empty
    p = _ratio(counts.tp, counts.tp + counts.fp, both, "precision")
    r = _ratio(counts.tp, counts.tp + counts.fn, both, "recall")
    iou = _ratio(counts.tp, counts.tp + counts.fp + counts.fn, both, "iou")
    return p, r, iou


def _scores(counts: ConfusionCounts) -> ClassScores:
    p, r, iou = precision_recall_iou(counts)
    return ClassScores(p, r, iou, counts.tp + counts.fn)


def report_from_counts(counts: ConfusionCounts) -> WeightedReport:
    water = _scores(counts)
    background = _scores(counts.swapped())
    total = water.support + background.support
    if total == 0:
        raise ValueError("empty masks")

    def avg(attr):
        return (
            water.support * getattr(water, attr) + background.support * getattr(background, attr)
        ) / total

    return WeightedReport(water, background, avg("precision"), avg("recall"), avg("iou"))


def weighted_report(pred, target) -> WeightedReport:
    """Per-class scores for water and background, averaged with ground-truth support as weight."""
    return report_from_counts(confusion(pred, target))


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical inputs."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def psnr_record(value: float) -> dict:
    """JSON-safe PSNR: infinite values become ``null`` with a flag."""
    if math.isinf(value):
        return {"psnr": None, "psnr_infinite": True}
    return {"psnr": value, "psnr_infinite": False}


def __getattr__(name):
    # ssim lives with the despeckling losses; re-exported lazily to avoid an import cycle
    if name == "ssim":
        from hydrocube.despeckle import ssim

        return ssim
    raise AttributeError(name)
