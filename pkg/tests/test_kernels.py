import os
import subprocess
import sys

import numpy as np
import pytest

from mfce import _kernels

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba unavailable")

CASES = [  # (shape, kt, kf, dilation_t, stride_f)
    ((2, 3, 11, 6), 3, 3, 1, 1),
    ((1, 2, 17, 8), 3, 2, 4, 2),
    ((3, 1, 9, 5), 5, 5, 1, 1),
]


def _geom(shape, kt, kf, d, s):
    return shape[2] - (kt - 1) * d, (shape[3] - kf) // s + 1


@needs_numba
@pytest.mark.parametrize("shape,kt,kf,d,s", CASES)
def test_im2col_paths_bitwise_equal(rng, shape, kt, kf, d, s):
    x = rng.normal(size=shape)
    t_out, f_out = _geom(shape, kt, kf, d, s)
    a = _kernels.im2col(x, kt, kf, d, s, t_out, f_out, use_numba=True)
    b = _kernels.im2col(x, kt, kf, d, s, t_out, f_out, use_numba=False)
    assert a.tobytes() == b.tobytes()


@needs_numba
@pytest.mark.parametrize("shape,kt,kf,d,s", CASES)
def test_col2im_paths_agree(rng, shape, kt, kf, d, s):
    t_out, f_out = _geom(shape, kt, kf, d, s)
    g = rng.normal(size=(shape[0] * t_out * f_out, shape[1] * kt * kf))
    a = _kernels.col2im(g, shape, kt, kf, d, s, t_out, f_out, use_numba=True)
    b = _kernels.col2im(g, shape, kt, kf, d, s, t_out, f_out, use_numba=False)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@pytest.mark.parametrize("use_numba", [False, True])
@pytest.mark.parametrize("shape,kt,kf,d,s", CASES)
def test_col2im_is_adjoint(rng, shape, kt, kf, d, s, use_numba):
    t_out, f_out = _geom(shape, kt, kf, d, s)
    x = rng.normal(size=shape)
    g = rng.normal(size=(shape[0] * t_out * f_out, shape[1] * kt * kf))
    lhs = np.vdot(_kernels.im2col(x, kt, kf, d, s, t_out, f_out, use_numba), g)
    rhs = np.vdot(x, _kernels.col2im(g, shape, kt, kf, d, s, t_out, f_out, use_numba))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, MFCE_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from mfce import _kernels; print(_kernels.backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
