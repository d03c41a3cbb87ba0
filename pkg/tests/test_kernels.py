"""Backend parity: elementwise kernels must agree bit for bit between the numba
and numpy implementations; scalar reductions may differ only at the last ulp."""

import numpy as np
import pytest

from cono import _kernels as K


def _pairs(rand4d, n=20):
    gen = np.random.Generator(np.random.PCG64(7))
    for _ in range(n):
        frames = int(gen.integers(1, 9))
        size = int(gen.integers(1, 65))
        a = gen.standard_normal((frames, size)).astype(np.float32)
        b = gen.standard_normal((frames, size)).astype(np.float32)
        yield a, b


def test_backend_flag_is_valid():
    assert K.BACKEND in ("numba", "numpy")
    if K.BACKEND == "numba":
        assert K.HAS_NUMBA


needs_numba = pytest.mark.skipif(not K.HAS_NUMBA, reason="numba not installed")


@needs_numba
def test_affine2_bit_identical_across_backends(rand4d):
    for a, b in _pairs(rand4d):
        ref = K.affine2_np(a, b, -6.5, 7.5)
        out = K.affine2_nb(a, b, -6.5, 7.5)
        assert out.dtype == np.float32
        assert np.array_equal(ref, out)


@needs_numba
def test_posterior_eps_bit_identical_across_backends(rand4d):
    for z, mu in _pairs(rand4d):
        ref = K.posterior_eps_np(z, mu, 0.6, 0.64, 0.09)
        out = K.posterior_eps_nb(z, mu, 0.6, 0.64, 0.09)
        assert np.array_equal(ref, out)


@needs_numba
def test_frame_mean_bit_identical_across_backends(rand4d):
    for a, _ in _pairs(rand4d):
        assert np.array_equal(K.frame_mean_np(a), K.frame_mean_nb(a))


@needs_numba
def test_regularize_bit_identical_across_backends(rand4d):
    for a, b in _pairs(rand4d):
        out_np, gb_np, ga_np = K.regularize_np(a, b, 2.5)
        out_nb, gb_nb, ga_nb = K.regularize_nb(a, b, 2.5)
        assert np.array_equal(out_np, out_nb)
        # scalar reductions: last-ulp agreement only
        assert gb_np == pytest.approx(gb_nb, rel=1e-12, abs=1e-300)
        assert ga_np == pytest.approx(ga_nb, rel=1e-12, abs=1e-300)


@needs_numba
def test_mse_near_identical_across_backends(rand4d):
    for a, b in _pairs(rand4d):
        assert K.mse_np(a, b) == pytest.approx(K.mse_nb(a, b), rel=1e-12)


def test_affine2_float64_accumulation():
    # coefficients applied in float64 then rounded once to float32
    a = np.full((1, 4), 0.1, np.float32)
    b = np.full((1, 4), 0.2, np.float32)
    expect = (float(a[0, 0]) * 1.25 + float(b[0, 0]) * -0.75)
    out = K.affine2(a, b, 1.25, -0.75)
    assert out.dtype == np.float32
    assert np.all(out == np.float32(expect))


def test_frame_mean_matches_naive_float64(rand4d):
    # per-element mean across frames, accumulated frame by frame in float64
    a = rand4d((6, 48)).reshape(6, 48)
    acc = np.zeros(48, np.float64)
    for f in range(6):
        acc += a[f].astype(np.float64)
    ref = (acc / 6.0).astype(np.float32)
    out = K.frame_mean(a)
    assert out.dtype == np.float32
    assert np.array_equal(out, ref)


def test_mse_hand_value():
    a = np.zeros((1, 2), np.float32)
    b = np.array([[3.0, 1.0]], np.float32)
    assert K.mse(a, b) == pytest.approx(5.0, abs=1e-12)


def test_regularize_zero_delta_is_identity(rand4d):
    a = rand4d((4, 16)).reshape(4, 16)
    b = rand4d((4, 16)).reshape(4, 16)
    out, gb, ga = K.regularize(a, b, 0.0)
    assert np.array_equal(out, a)
    assert gb == ga
