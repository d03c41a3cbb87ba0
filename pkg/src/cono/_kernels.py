"""Numeric kernels for the sampler hot path, with two interchangeable backends.

The sampler spends nearly all its time in a handful of elementwise float32
updates and frame-axis reductions. Each kernel exists twice: a numba-compiled
version and a plain numpy version that performs the same arithmetic in the
same order. Elementwise kernels (affine2, posterior_eps, regularize outputs)
are bit-identical across backends because every element is computed in
float64 with one final rounding to float32. Scalar reductions (mse, the
content-loss traces) may differ in the last ulp because numpy sums pairwise
while the compiled loops sum sequentially; they are diagnostics, never fed
back into latents.

Backend selection, decided once at import time:
  CONO_BACKEND=numba  force numba, raise if it cannot be imported
  CONO_BACKEND=numpy  force the pure-numpy path
  unset               numba when importable, numpy otherwise
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError

try:
    import numba

    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False

_requested = os.environ.get("CONO_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ConfigError(f"CONO_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
if _requested == "numba" and not HAS_NUMBA:
    raise ConfigError("CONO_BACKEND=numba but numba is not importable")
if _requested == "":
    BACKEND = "numba" if HAS_NUMBA else "numpy"
else:
    BACKEND = _requested


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------

def affine2_np(a: np.ndarray, b: np.ndarray, ca: float, cb: float) -> np.ndarray:
    """ca*a + cb*b in float64, rounded once to float32."""
    out = ca * a.astype(np.float64) + cb * b.astype(np.float64)
    return out.astype(np.float32)


def posterior_eps_np(
    z: np.ndarray, mu: np.ndarray, sqrt_ab: float, one_minus_ab: float, var0: float
) -> np.ndarray:
    """Noise implied by the Gaussian posterior mean of z0 given z.

    For z = sqrt_ab*z0 + sqrt(one_minus_ab)*eps with z0 ~ N(mu, var0) per
    element, E[z0|z] = (sqrt_ab*var0*z + one_minus_ab*mu) / (ab*var0 +
    one_minus_ab) and eps = (z - sqrt_ab*E[z0|z]) / sqrt(one_minus_ab).
    """
    z64 = z.astype(np.float64)
    mu64 = mu.astype(np.float64)
    denom = sqrt_ab * sqrt_ab * var0 + one_minus_ab
    x0 = (sqrt_ab * var0 * z64 + one_minus_ab * mu64) / denom
    eps = (z64 - sqrt_ab * x0) / np.sqrt(one_minus_ab)
    return eps.astype(np.float32)


def frame_mean_np(x2d: np.ndarray) -> np.ndarray:
    """Mean over axis 0 of an (n, p) float32 array, accumulated frame by
    frame in float64 so both backends add in the same order."""
    n = x2d.shape[0]
    acc = np.zeros(x2d.shape[1], np.float64)
    for f in range(n):
        acc += x2d[f].astype(np.float64)
    return (acc / n).astype(np.float32)


def mse_np(a: np.ndarray, b: np.ndarray) -> float:
    d = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(d * d))


def regularize_np(
    eps2d: np.ndarray, ref2d: np.ndarray, delta: float
) -> tuple[np.ndarray, float, float]:
    """One gradient step shrinking the frame-mean of eps2d toward ref2d's.

    Returns (updated eps, content loss before, content loss after). The loss
    is mean over elements of (frame_mean(eps) - frame_mean(ref))**2; its
    gradient wrt each element of eps is 2*(diff)/(n*p), shared by all frames.
    """
    n, p = eps2d.shape
    acc_cur = np.zeros(p, np.float64)
    acc_ref = np.zeros(p, np.float64)
    for f in range(n):
        acc_cur += eps2d[f].astype(np.float64)
        acc_ref += ref2d[f].astype(np.float64)
    diff = acc_cur / n - acc_ref / n
    g_before = float(np.mean(diff * diff))
    if delta == 0.0:
        return eps2d.copy(), g_before, g_before
    step = (2.0 * delta / (n * p)) * diff
    out = (eps2d.astype(np.float64) - step[None, :]).astype(np.float32)
    acc_new = np.zeros(p, np.float64)
    for f in range(n):
        acc_new += out[f].astype(np.float64)
    diff_new = acc_new / n - acc_ref / n
    g_after = float(np.mean(diff_new * diff_new))
    return out, g_before, g_after


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @numba.njit(cache=True)
    def _affine2_nb(a, b, ca, cb):  # pragma: no cover - exercised via wrapper
        out = np.empty(a.shape, np.float32)
        af = a.reshape(-1)
        bf = b.reshape(-1)
        of = out.reshape(-1)
        for i in range(af.size):
            va = ca * np.float64(af[i])
            vb = cb * np.float64(bf[i])
            of[i] = np.float32(va + vb)
        return out

    @numba.njit(cache=True)
    def _posterior_eps_nb(z, mu, sqrt_ab, one_minus_ab, var0):  # pragma: no cover
        out = np.empty(z.shape, np.float32)
        zf = z.reshape(-1)
        mf = mu.reshape(-1)
        of = out.reshape(-1)
        denom = sqrt_ab * sqrt_ab * var0 + one_minus_ab
        sig = np.sqrt(one_minus_ab)
        for i in range(zf.size):
            z64 = np.float64(zf[i])
            num = sqrt_ab * var0 * z64 + one_minus_ab * np.float64(mf[i])
            x0 = num / denom
            of[i] = np.float32((z64 - sqrt_ab * x0) / sig)
        return out

    @numba.njit(cache=True)
    def _frame_mean_nb(x2d):  # pragma: no cover
        n, p = x2d.shape
        acc = np.zeros(p, np.float64)
        for f in range(n):
            for j in range(p):
                acc[j] += np.float64(x2d[f, j])
        out = np.empty(p, np.float32)
        for j in range(p):
            out[j] = np.float32(acc[j] / n)
        return out

    @numba.njit(cache=True)
    def _mse_nb(a, b):  # pragma: no cover
        af = a.reshape(-1)
        bf = b.reshape(-1)
        acc = 0.0
        for i in range(af.size):
            d = np.float64(af[i]) - np.float64(bf[i])
            acc += d * d
        return acc / af.size

    @numba.njit(cache=True)
    def _regularize_nb(eps2d, ref2d, delta):  # pragma: no cover
        n, p = eps2d.shape
        acc_cur = np.zeros(p, np.float64)
        acc_ref = np.zeros(p, np.float64)
        for f in range(n):
            for j in range(p):
                acc_cur[j] += np.float64(eps2d[f, j])
                acc_ref[j] += np.float64(ref2d[f, j])
        diff = np.empty(p, np.float64)
        g_before = 0.0
        for j in range(p):
            diff[j] = acc_cur[j] / n - acc_ref[j] / n
            g_before += diff[j] * diff[j]
        g_before /= p
        if delta == 0.0:
            return eps2d.copy(), g_before, g_before
        scale = 2.0 * delta / (n * p)
        out = np.empty((n, p), np.float32)
        for f in range(n):
            for j in range(p):
                out[f, j] = np.float32(np.float64(eps2d[f, j]) - scale * diff[j])
        acc_new = np.zeros(p, np.float64)
        for f in range(n):
            for j in range(p):
                acc_new[j] += np.float64(out[f, j])
        g_after = 0.0
        for j in range(p):
            d = acc_new[j] / n - acc_ref[j] / n
            g_after += d * d
        g_after /= p
        return out, g_before, g_after

    def affine2_nb(a, b, ca, cb):
        return _affine2_nb(np.ascontiguousarray(a), np.ascontiguousarray(b),
                           float(ca), float(cb))

    def posterior_eps_nb(z, mu, sqrt_ab, one_minus_ab, var0):
        return _posterior_eps_nb(np.ascontiguousarray(z), np.ascontiguousarray(mu),
                                 float(sqrt_ab), float(one_minus_ab), float(var0))

    def frame_mean_nb(x2d):
        return _frame_mean_nb(np.ascontiguousarray(x2d))

    def mse_nb(a, b):
        return float(_mse_nb(np.ascontiguousarray(a), np.ascontiguousarray(b)))

    def regularize_nb(eps2d, ref2d, delta):
        out, gb, ga = _regularize_nb(np.ascontiguousarray(eps2d),
                                     np.ascontiguousarray(ref2d), float(delta))
        return out, float(gb), float(ga)


if BACKEND == "numba":
    affine2 = affine2_nb
    posterior_eps = posterior_eps_nb
    frame_mean = frame_mean_nb
    mse = mse_nb
    regularize = regularize_nb
else:
    affine2 = affine2_np
    posterior_eps = posterior_eps_np
    frame_mean = frame_mean_np
    mse = mse_np
    regularize = regularize_np


def warmup() -> None:
    """Trigger compilation of every numba kernel on tiny inputs."""
    if BACKEND != "numba":
        return
    a = np.ones((2, 3), np.float32)
    b = np.full((2, 3), 0.5, np.float32)
    affine2(a, b, 0.5, 0.5)
    posterior_eps(a, b, 0.5, 0.75, 0.09)
    frame_mean(a)
    mse(a, b)
    regularize(a, b, 1.0)
