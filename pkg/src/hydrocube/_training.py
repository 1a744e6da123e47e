"""Shared plumbing for the three trainers."""

from __future__ import annotations

import json
import math
import zlib
from pathlib import Path

import numpy as np
import torch


class TrainingError(RuntimeError):
    pass


def seed_everything(seed: int) -> np.random.Generator:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
    return np.random.default_rng(seed)


def sub_seed(seed: int, name: str) -> int:
    """Stable per-stage seed derived from a top-level seed."""
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def check_finite(value: float, epoch: int, what: str) -> None:
    if not math.isfinite(value):
        raise TrainingError(f"non-finite {what} at epoch {epoch}: {value!r}")


def save_checkpoint(directory: Path, model: torch.nn.Module, spec: dict) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "spec.json").write_text(json.dumps(spec, indent=2, sort_keys=True) + "\n")
    torch.save(model.state_dict(), directory / "weights.pt")


def load_state(directory: Path) -> tuple[dict, dict]:
    directory = Path(directory)
    spec = json.loads((directory / "spec.json").read_text())
    state = torch.load(directory / "weights.pt", weights_only=True)
    return spec, state


def write_csv_log(path: Path, rows: list[dict], columns: list[str]) -> None:
    import csv

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.10g}"
    return v
