"""Differentiable counterparts of the numpy kernels, used inside training losses.

All functions take tensors shaped ``(H, W)``, ``(N, H, W)`` or ``(N, 1, H, W)``
and return one value per sample.
"""

import numpy as np
import torch
import torch.nn.functional as F


def as_batch(x) -> torch.Tensor:
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.ascontiguousarray(x))
    if x.dim() == 2:
        return x[None, None]
    if x.dim() == 3:
        return x[:, None]
    if x.dim() == 4 and x.shape[1] == 1:
        return x
    raise ValueError(f"expected (H,W), (N,H,W) or (N,1,H,W), got {tuple(x.shape)}")


def mse(a, b):
    return ((a - b) ** 2).flatten(1).mean(dim=1)


def _window_mean(x, window):
    r = window // 2
    return F.avg_pool2d(F.pad(x, (r, r, r, r), mode="reflect"), window, stride=1)


def ssim(a, b, window, c1, c2):
    mua = _window_mean(a, window)
    mub = _window_mean(b, window)
    va = _window_mean(a * a, window) - mua * mua
    vb = _window_mean(b * b, window) - mub * mub
    cov = _window_mean(a * b, window) - mua * mub
    smap = ((2 * mua * mub + c1) * (2 * cov + c2)) / ((mua * mua + mub * mub + c1) * (va + vb + c2))
    return smap.flatten(1).mean(dim=1)


def tv(x):
    dr = F.pad(x[..., 1:, :] - x[..., :-1, :], (0, 0, 0, 1))
    dc = F.pad(x[..., :, 1:] - x[..., :, :-1], (0, 1, 0, 0))
    sq = dr * dr + dc * dc
    # zero subgradient where the image is locally flat; sqrt'(0) is infinite
    pos = sq > 0
    root = torch.where(pos, torch.sqrt(torch.where(pos, sq, torch.ones_like(sq))), torch.zeros_like(sq))
    return root.flatten(1).sum(dim=1)
