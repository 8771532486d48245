"""The numba and numpy kernel paths must agree bit for bit."""

import os
import subprocess
import sys

import numpy as np
import pytest

from asymq import kernels
from asymq._accel import HAVE_NUMBA
from asymq.formats import FormatId, codebook_for

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")


def _probe_points(values, rng, n=4000):
    mids = (values[:-1] + values[1:]) / 2
    span = values[-1] - values[0]
    return np.concatenate([
        values, mids, rng.uniform(values[0] - span, values[-1] + span, n),
        [0.0, -0.0, 1e300, -1e300],
    ])


@needs_numba
@pytest.mark.parametrize("fmt", list(FormatId))
def test_nearest_index_backends_agree(fmt, rng):
    values = codebook_for(fmt).values64
    t = _probe_points(values, rng)
    assert np.array_equal(kernels.nearest_index_np(t, values), kernels.nearest_index_nb(t, values))


@needs_numba
@pytest.mark.parametrize("bits", [3, 4])
@pytest.mark.parametrize("cols", [1, 2, 3, 7, 8, 9, 64, 129])
def test_pack_backends_agree(bits, cols, rng):
    codes = rng.integers(0, 1 << bits, size=(5, cols), dtype=np.uint8)
    a = kernels.pack_rows_np(codes, bits)
    b = kernels.pack_rows_nb(codes, bits)
    assert a.shape == (5, kernels.row_nbytes(cols, bits))
    assert np.array_equal(a, b)
    assert np.array_equal(kernels.unpack_rows_np(a, bits, cols), codes)
    assert np.array_equal(kernels.unpack_rows_nb(a, bits, cols), codes)


@needs_numba
def test_ordered_matmul_backends_agree(rng):
    w = rng.standard_normal((17, 33)).astype(np.float32)
    x = rng.standard_normal((33, 5)).astype(np.float32)
    a = kernels.ordered_matmul_np(w, x)
    b = kernels.ordered_matmul_nb(w, x)
    assert np.array_equal(a.view(np.uint32), b.view(np.uint32))
    assert np.allclose(a, w.astype(np.float64) @ x, rtol=1e-4, atol=1e-4)


def test_ordered_matmul_accumulates_in_index_order():
    # Order-sensitive in float32: 1e8 + 1 - 1e8 loses the 1, -1e8 + 1e8 + 1 keeps it.
    w = np.array([[1e8, 1.0, -1e8]], dtype=np.float32)
    x = np.ones((3, 1), dtype=np.float32)
    assert kernels.ordered_matmul_np(w, x)[0, 0] == 0.0
    assert kernels.ordered_matmul(w, x)[0, 0] == 0.0


@needs_numba
@pytest.mark.parametrize("bits", [3, 4])
def test_lut_matmul_backends_agree(bits, rng):
    rows, cols, gs = 6, 40, 16
    gpr = -(-cols // gs)
    codes = rng.integers(0, 1 << bits, size=(rows, cols), dtype=np.uint8)
    packed = kernels.pack_rows_np(codes, bits)
    lut = rng.standard_normal((rows * gpr, 1 << bits)).astype(np.float32)
    x = rng.standard_normal((cols, 3)).astype(np.float32)
    a = kernels.lut_matmul_np(packed, bits, cols, lut, gpr, gs, x)
    b = kernels.lut_matmul_nb(packed, bits, cols, lut, gpr, gs, x)
    assert np.array_equal(a.view(np.uint32), b.view(np.uint32))


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, ASYMQ_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "from asymq import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"
