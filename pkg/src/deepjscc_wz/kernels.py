"""Hot inner kernels for 2-D convolution: im2col gather and col2im scatter.

Layout contract shared by both backends:

* ``im2col`` takes a padded input ``(n, c, hp, wp)`` and returns
  ``(n, c*k*k, oh*ow)`` where row ``(ci*k + ki)*k + kj`` holds the input
  value at kernel offset ``(ki, kj)`` and column ``oi*ow + oj`` indexes the
  output pixel. A convolution is then one matmul per sample.
* ``col2im`` is the exact adjoint of ``im2col``: it scatter-adds columns back
  onto the padded input grid. Contributions to one output element are
  accumulated in kernel-offset order ``(ki, kj)`` in BOTH backends, so the
  two paths are bit-identical, not merely close.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .backend import ACTIVE_BACKEND


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


# ---------------------------------------------------------------------------
# pure-numpy path
# ---------------------------------------------------------------------------

def im2col_numpy(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    n, c, hp, wp = xp.shape
    oh = (hp - k) // stride + 1
    ow = (wp - k) // stride + 1
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, :, :]           # (n, c, oh, ow, k, k)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, oh * ow)
    return np.ascontiguousarray(cols)


def col2im_numpy(cols: np.ndarray, xp_shape: tuple, k: int, stride: int) -> np.ndarray:
    n, c, hp, wp = xp_shape
    oh = (hp - k) // stride + 1
    ow = (wp - k) // stride + 1
    acc = np.zeros(xp_shape, dtype=cols.dtype)
    cols6 = cols.reshape(n, c, k, k, oh, ow)
    for ki in range(k):
        for kj in range(k):
            acc[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += (
                cols6[:, :, ki, kj]
            )
    return acc


# ---------------------------------------------------------------------------
# numba path (compiled lazily on first use, cached on disk)
# ---------------------------------------------------------------------------

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    NUMBA_AVAILABLE = False

if NUMBA_AVAILABLE:

    @njit(cache=True)
    def _im2col_kernel(xp, k, stride, cols):  # pragma: no cover - jitted
        n, c, hp, wp = xp.shape
        oh = (hp - k) // stride + 1
        ow = (wp - k) // stride + 1
        for i in range(n):
            for ci in range(c):
                for ki in range(k):
                    for kj in range(k):
                        row = (ci * k + ki) * k + kj
                        for oi in range(oh):
                            si = oi * stride + ki
                            for oj in range(ow):
                                cols[i, row, oi * ow + oj] = xp[i, ci, si, oj * stride + kj]

    @njit(cache=True)
    def _col2im_kernel(cols, k, stride, acc):  # pragma: no cover - jitted
        n, c, hp, wp = acc.shape
        oh = (hp - k) // stride + 1
        ow = (wp - k) // stride + 1
        # ki/kj are the outermost accumulation loops to match the numpy path's
        # slab-add order exactly.
        for ki in range(k):
            for kj in range(k):
                for i in range(n):
                    for ci in range(c):
                        row = (ci * k + ki) * k + kj
                        for oi in range(oh):
                            si = oi * stride + ki
                            for oj in range(ow):
                                acc[i, ci, si, oj * stride + kj] += cols[i, row, oi * ow + oj]

    def im2col_numba(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
        n, c, hp, wp = xp.shape
        oh = (hp - k) // stride + 1
        ow = (wp - k) // stride + 1
        cols = np.empty((n, c * k * k, oh * ow), dtype=xp.dtype)
        _im2col_kernel(np.ascontiguousarray(xp), k, stride, cols)
        return cols

    def col2im_numba(cols: np.ndarray, xp_shape: tuple, k: int, stride: int) -> np.ndarray:
        acc = np.zeros(xp_shape, dtype=cols.dtype)
        _col2im_kernel(np.ascontiguousarray(cols), k, stride, acc)
        return acc

if ACTIVE_BACKEND == "numba":
    im2col = im2col_numba
    col2im = col2im_numba
else:
    im2col = im2col_numpy
    col2im = col2im_numpy
