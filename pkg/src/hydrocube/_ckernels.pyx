# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures mirror :mod:`hydrocube._pykernels`."""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def confusion_counts(const unsigned char[::1] pred, const unsigned char[::1] target):
    # inputs are 0/1; running sums instead of branches keep the loop vectorizable
    cdef Py_ssize_t i, n = pred.shape[0]
    cdef long long tp = 0, sp = 0, st = 0
    if target.shape[0] != n:
        raise ValueError("shape mismatch")
    with nogil:
        for i in range(n):
            tp += pred[i] & target[i]
            sp += pred[i]
            st += target[i]
    return int(tp), int(sp - tp), int(st - tp), int(n - sp - st + tp)


def tv_penalty(const double[:, ::1] img):
    cdef Py_ssize_t i, j, h = img.shape[0], w = img.shape[1]
    cdef double dr, dc, total = 0.0
    with nogil:
        for i in range(h):
            for j in range(w):
                dr = img[i + 1, j] - img[i, j] if i + 1 < h else 0.0
                dc = img[i, j + 1] - img[i, j] if j + 1 < w else 0.0
                total += sqrt(dr * dr + dc * dc)
    return total


cdef inline Py_ssize_t _reflect(Py_ssize_t k, Py_ssize_t n) nogil:
    # numpy "reflect" (edge sample not repeated); valid while the pad is < n
    if k < 0:
        return -k
    if k >= n:
        return 2 * n - 2 - k
    return k


def ssim_mean(const double[:, ::1] a, const double[:, ::1] b, int window, double c1, double c2):
    cdef Py_ssize_t h = a.shape[0], w = a.shape[1]
    cdef Py_ssize_t i, j, di, dj, r = window // 2, ii, jj
    cdef double sa, sb, saa, sbb, sab, x, y, inv, mua, mub, va, vb, cov, total = 0.0
    if b.shape[0] != h or b.shape[1] != w:
        raise ValueError("shape mismatch")
    if r >= h or r >= w:
        raise ValueError("window too large for reflect padding")
    inv = 1.0 / (window * window)
    with nogil:
        for i in range(h):
            for j in range(w):
                sa = 0.0; sb = 0.0; saa = 0.0; sbb = 0.0; sab = 0.0
                for di in range(-r, r + 1):
                    ii = _reflect(i + di, h)
                    for dj in range(-r, r + 1):
                        jj = _reflect(j + dj, w)
                        x = a[ii, jj]
                        y = b[ii, jj]
                        sa += x
                        sb += y
                        saa += x * x
                        sbb += y * y
                        sab += x * y
                mua = sa * inv
                mub = sb * inv
                va = saa * inv - mua * mua
                vb = sbb * inv - mub * mub
                cov = sab * inv - mua * mub
                total += ((2.0 * mua * mub + c1) * (2.0 * cov + c2)) / (
                    (mua * mua + mub * mub + c1) * (va + vb + c2)
                )
    return total / (h * w)


def masked_sum(const unsigned char[::1] mask, const double[::1] values):
    cdef Py_ssize_t i, n = mask.shape[0]
    cdef double total = 0.0
    if values.shape[0] != n:
        raise ValueError("shape mismatch")
    with nogil:
        for i in range(n):
            if mask[i]:
                total += values[i]
    return total


def bilinear_upsample(const double[:, ::1] src, int factor):
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1]
    cdef Py_ssize_t oh = h * factor, ow = w * factor, i, j, r0, c0, r1, c1
    cdef double y, x, fy, fx
    out = np.empty((oh, ow), dtype=np.float64)
    cdef double[:, ::1] dst = out
    with nogil:
        for i in range(oh):
            y = (i + 0.5) / factor - 0.5
            if y < 0.0:
                y = 0.0
            if y > h - 1:
                y = h - 1
            r0 = <Py_ssize_t>y
            r1 = r0 + 1 if r0 + 1 < h else r0
            fy = y - r0
            for j in range(ow):
                x = (j + 0.5) / factor - 0.5
                if x < 0.0:
                    x = 0.0
                if x > w - 1:
                    x = w - 1
                c0 = <Py_ssize_t>x
                c1 = c0 + 1 if c0 + 1 < w else c0
                fx = x - c0
                dst[i, j] = ((1.0 - fy) * ((1.0 - fx) * src[r0, c0] + fx * src[r0, c1])
                             + fy * ((1.0 - fx) * src[r1, c0] + fx * src[r1, c1]))
    return out
