"""Backend selection for the numeric kernels.

The compiled extension is used when importable; set ``HYDROCUBE_PURE=1`` to
force the numpy fallback. Both backends accept arbitrary arrays here and
return Python scalars (or float64 arrays).
"""

import os

import numpy as np

from hydrocube import _pykernels

_ext = None
if not os.environ.get("HYDROCUBE_PURE"):
    try:
        from hydrocube import _ckernels as _ext
    except ImportError:  # pragma: no cover - depends on build
        _ext = None

BACKEND = "cython" if _ext is not None else "python"


def _flat_u8(x):
    # bool is one byte of 0/1, so a view avoids a copy
    b = np.ascontiguousarray(np.asarray(x).astype(bool, copy=False))
    return b.reshape(-1).view(np.uint8)


def _f64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def confusion_counts(pred, target):
    if np.shape(pred) != np.shape(target):
        raise ValueError(f"shape mismatch: {np.shape(pred)} vs {np.shape(target)}")
    if _ext is None:
        return _pykernels.confusion_counts(pred, target)
    return _ext.confusion_counts(_flat_u8(pred), _flat_u8(target))


def tv_penalty(img):
    if _ext is None:
        return _pykernels.tv_penalty(img)
    return _ext.tv_penalty(_f64(img))


def ssim_mean(a, b, window, c1, c2):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    if _ext is None:
        return _pykernels.ssim_mean(a, b, window, c1, c2)
    return _ext.ssim_mean(_f64(a), _f64(b), int(window), float(c1), float(c2))


def masked_sum(mask, values):
    if np.shape(mask) != np.shape(values):
        raise ValueError(f"shape mismatch: {np.shape(mask)} vs {np.shape(values)}")
    if _ext is None:
        return _pykernels.masked_sum(mask, values)
    return _ext.masked_sum(_flat_u8(mask), _f64(values).ravel())


def bilinear_upsample(src, factor):
    if _ext is None:
        return _pykernels.bilinear_upsample(src, factor)
    return _ext.bilinear_upsample(_f64(src), int(factor))
