"""Pure-numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or ``HYDROCUBE_PURE=1``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def confusion_counts(pred, target):
    pred = np.asarray(pred, dtype=bool)
    target = np.asarray(target, dtype=bool)
    if pred.shape != target.shape:
        raise ValueError("shape mismatch")
    tp = int(np.count_nonzero(pred & target))
    fp = int(np.count_nonzero(pred & ~target))
    fn = int(np.count_nonzero(~pred & target))
    return tp, fp, fn, pred.size - tp - fp - fn


def tv_penalty(img):
    img = np.asarray(img, dtype=np.float64)
    dr = np.zeros_like(img)
    dc = np.zeros_like(img)
    dr[:-1, :] = img[1:, :] - img[:-1, :]
    dc[:, :-1] = img[:, 1:] - img[:, :-1]
    return float(np.sqrt(dr * dr + dc * dc).sum())


def _window_mean(x, window):
    r = window // 2
    padded = np.pad(x, r, mode="reflect")
    return sliding_window_view(padded, (window, window)).mean(axis=(-2, -1))


def ssim_mean(a, b, window, c1, c2):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    if window // 2 >= min(a.shape):
        raise ValueError("window too large for reflect padding")
    mua = _window_mean(a, window)
    mub = _window_mean(b, window)
    va = _window_mean(a * a, window) - mua * mua
    vb = _window_mean(b * b, window) - mub * mub
    cov = _window_mean(a * b, window) - mua * mub
    num = (2 * mua * mub + c1) * (2 * cov + c2)
    den = (mua * mua + mub * mub + c1) * (va + vb + c2)
    return float((num / den).mean())


def masked_sum(mask, values):
    mask = np.asarray(mask, dtype=bool)
    values = np.asarray(values, dtype=np.float64)
    if mask.shape != values.shape:
        raise ValueError("shape mismatch")
    return float(values[mask].sum())


def _axis_weights(n, factor):
    pos = np.clip((np.arange(n * factor) + 0.5) / factor - 0.5, 0.0, n - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n - 1)
    return lo, hi, pos - lo


def bilinear_upsample(src, factor):
    src = np.asarray(src, dtype=np.float64)
    h, w = src.shape
    r0, r1, fy = _axis_weights(h, factor)
    c0, c1, fx = _axis_weights(w, factor)
    fy = fy[:, None]
    top = (1 - fx) * src[r0][:, c0] + fx * src[r0][:, c1]
    bottom = (1 - fx) * src[r1][:, c0] + fx * src[r1][:, c1]
    return (1 - fy) * top + fy * bottom
