"""Hot loops of the dilated convolution: patch gather (im2col) and its adjoint
scatter (col2im).

Two implementations live here. The numba ones are compiled with ``@njit`` and
used by default; setting ``MFCE_DISABLE_NUMBA=1`` (or running without numba
installed) switches to the pure-numpy path. Both produce the same column
matrix bit for bit; the scatter differs only in summation order.

Column layout, shared by both paths::

    cols[(b, t, f), (c, i, j)] = x[b, c, t + i * dilation_t, f * stride_f + j]

so that ``cols @ kernel.reshape(C_out, -1).T`` is the cross-correlation.
"""
from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _numba_requested() -> bool:
    flag = os.environ.get("MFCE_DISABLE_NUMBA", "").strip().lower()
    return flag not in ("1", "true", "yes", "on")


try:
    if not _numba_requested():
        raise ImportError("numba disabled by MFCE_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def im2col_numpy(x: np.ndarray, kt: int, kf: int, dilation_t: int,
                 stride_f: int, t_out: int, f_out: int) -> np.ndarray:
    b, c, _, _ = x.shape
    x = np.ascontiguousarray(x)
    sb, sc, st, sf = x.strides
    view = as_strided(
        x,
        shape=(b, t_out, f_out, c, kt, kf),
        strides=(sb, st, sf * stride_f, sc, st * dilation_t, sf),
        writeable=False,
    )
    return view.reshape(b * t_out * f_out, c * kt * kf)


def col2im_numpy(cols: np.ndarray, x_shape: tuple, kt: int, kf: int,
                 dilation_t: int, stride_f: int, t_out: int,
                 f_out: int) -> np.ndarray:
    b, c, t, f = x_shape
    g = cols.reshape(b, t_out, f_out, c, kt, kf)
    out = np.zeros(x_shape, dtype=np.float64)
    f_span = stride_f * (f_out - 1) + 1
    for i in range(kt):
        t0 = i * dilation_t
        for j in range(kf):
            # (b, t_out, f_out, c) -> (b, c, t_out, f_out)
            out[:, :, t0:t0 + t_out, j:j + f_span:stride_f] += (
                g[:, :, :, :, i, j].transpose(0, 3, 1, 2))
    return out


if HAVE_NUMBA:

    @njit(cache=True)
    def im2col_numba(x, kt, kf, dilation_t, stride_f, t_out, f_out):
        b, c = x.shape[0], x.shape[1]
        cols = np.empty((b * t_out * f_out, c * kt * kf), dtype=np.float64)
        row = 0
        for bb in range(b):
            for t in range(t_out):
                for f in range(f_out):
                    col = 0
                    f0 = f * stride_f
                    for cc in range(c):
                        for i in range(kt):
                            ti = t + i * dilation_t
                            for j in range(kf):
                                cols[row, col] = x[bb, cc, ti, f0 + j]
                                col += 1
                    row += 1
        return cols

    @njit(cache=True)
    def col2im_numba(cols, b, c, t, f, kt, kf, dilation_t, stride_f,
                     t_out, f_out):
        out = np.zeros((b, c, t, f), dtype=np.float64)
        row = 0
        for bb in range(b):
            for to in range(t_out):
                for fo in range(f_out):
                    col = 0
                    f0 = fo * stride_f
                    for cc in range(c):
                        for i in range(kt):
                            ti = to + i * dilation_t
                            for j in range(kf):
                                out[bb, cc, ti, f0 + j] += cols[row, col]
                                col += 1
                    row += 1
        return out


def im2col(x, kt, kf, dilation_t, stride_f, t_out, f_out, use_numba=None):
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba and HAVE_NUMBA:
        return im2col_numba(np.ascontiguousarray(x), kt, kf, dilation_t,
                            stride_f, t_out, f_out)
    return im2col_numpy(x, kt, kf, dilation_t, stride_f, t_out, f_out)


def col2im(cols, x_shape, kt, kf, dilation_t, stride_f, t_out, f_out,
           use_numba=None):
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba and HAVE_NUMBA:
        b, c, t, f = x_shape
        return col2im_numba(np.ascontiguousarray(cols), b, c, t, f, kt, kf,
                            dilation_t, stride_f, t_out, f_out)
    return col2im_numpy(cols, x_shape, kt, kf, dilation_t, stride_f, t_out,
                        f_out)


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
