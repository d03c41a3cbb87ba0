"""Closed-form echo math, independent of the engine package.

Everything here is re-derived from the documented world contract: the
sha256 embedding recipe, the cosine-wave background, the wrapped Gaussian
blob, the beta schedules, the Gaussian posterior noise, and the guidance
combination. The engine is never imported; agreement is enforced by the
end-to-end tests instead.
"""

from __future__ import annotations

import hashlib
import math
from typing import Sequence

import numpy as np

from .errors import ModelError

EMBED_LEN = 8
SIGMA0_DEFAULT = 0.3
SIGMA_UNCOND_DEFAULT = 2.0
DEFAULT_T = 1000
DEFAULT_BETA_START = 0.00085
DEFAULT_BETA_END = 0.012
DEFAULT_KIND = "scaled_linear"


def embedding_from_text(text: str) -> np.ndarray:
    """8-number scene embedding derived from sha256 of the UTF-8 text:
    (background_id, blob_amplitude, start_x, start_y, velocity_x,
    velocity_y, blob_radius, reserved)."""
    d = hashlib.sha256(text.encode("utf-8")).digest()
    return np.array(
        [
            float(d[0] % 8),
            1.0 + d[1] / 255.0,
            float(d[2] % 16),
            float(d[3] % 16),
            float(d[4] % 5 - 2),
            float(d[5] % 5 - 2),
            1.5 + 1.5 * d[6] / 255.0,
            0.0,
        ],
        dtype=np.float64,
    )


def check_embedding(emb: Sequence[float]) -> np.ndarray:
    arr = np.asarray(emb, dtype=np.float64)
    if arr.ndim != 1 or arr.size < EMBED_LEN:
        raise ModelError(f"embedding must be a vector of at least {EMBED_LEN} numbers")
    if not np.isfinite(arr).all():
        raise ModelError("embedding contains non-finite values")
    if arr[6] <= 0.0:
        raise ModelError(f"blob_radius must be > 0, got {arr[6]}")
    return arr


def _background(background_id: int, channels: int, height: int, width: int) -> np.ndarray:
    """Three cosine waves per channel from a PCG64 stream seeded by the
    background id, rescaled to RMS 0.5."""
    gen = np.random.Generator(np.random.PCG64(background_id & 0xFFFFFFFF))
    yy = np.arange(height, dtype=np.float64)[:, None] / height
    xx = np.arange(width, dtype=np.float64)[None, :] / width
    out = np.zeros((channels, height, width), np.float64)
    for ch in range(channels):
        for _ in range(3):
            kx = int(gen.integers(0, 3))
            ky = int(gen.integers(0, 3))
            if kx == 0 and ky == 0:
                kx = 1
            phase = gen.uniform(0.0, 2.0 * np.pi)
            amp = gen.uniform(0.5, 1.0)
            out[ch] += amp * np.cos(2.0 * np.pi * (kx * xx + ky * yy) + phase)
    rms = float(np.sqrt(np.mean(out * out)))
    if rms > 1e-12:
        out *= 0.5 / rms
    return out


def _blob(
    cx: float, cy: float, amplitude: float, radius: float,
    channels: int, height: int, width: int,
) -> np.ndarray:
    """Wrapped isotropic Gaussian bump, identical across channels."""
    ys = np.arange(height, dtype=np.float64)[:, None]
    xs = np.arange(width, dtype=np.float64)[None, :]
    dx = np.mod(xs - cx + width / 2.0, width) - width / 2.0
    dy = np.mod(ys - cy + height / 2.0, height) - height / 2.0
    bump = amplitude * np.exp(-(dx * dx + dy * dy) / (2.0 * radius * radius))
    return np.broadcast_to(bump, (channels, height, width))


def scene_mean(embedding: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Clean video mean for an embedding: static background plus a blob at
    start + n*velocity per frame, float32 like any model's buffers."""
    n, c, h, w = (int(d) for d in shape)
    bg = _background(int(round(embedding[0])), c, h, w)
    sx, sy = float(embedding[2]), float(embedding[3])
    vx, vy = float(embedding[4]), float(embedding[5])
    frames = np.empty((n, c, h, w), np.float64)
    for f in range(n):
        frames[f] = bg + _blob(
            sx + f * vx, sy + f * vy, float(embedding[1]), float(embedding[6]), c, h, w
        )
    return frames.astype(np.float32)


def alpha_bars(
    T: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
    kind: str = DEFAULT_KIND,
) -> np.ndarray:
    """Cumulative products of 1 - beta for a linear or scaled-linear
    (linear in sqrt(beta)) ramp."""
    if T < 1:
        raise ModelError(f"schedule length must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ModelError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    elif kind == "scaled_linear":
        betas = np.linspace(math.sqrt(beta_start), math.sqrt(beta_end), T, dtype=np.float64) ** 2
    else:
        raise ModelError(f"unknown schedule kind {kind!r}")
    return np.cumprod(1.0 - betas)


def posterior_eps(z: np.ndarray, mu: np.ndarray, ab: float, sigma0: float) -> np.ndarray:
    """Noise implied by the Gaussian posterior mean of z0 given z_t.

    z_t = sqrt(ab)*z0 + sqrt(1-ab)*eps with z0 ~ N(mu, sigma0^2) per
    element gives E[z0|z_t] = (sqrt(ab)*sigma0^2*z_t + (1-ab)*mu) /
    (ab*sigma0^2 + 1-ab) and eps = (z_t - sqrt(ab)*E[z0|z_t]) / sqrt(1-ab).
    """
    if not ab < 1.0:
        raise ModelError(f"alpha_bar {ab} leaves no noise to predict")
    sqrt_ab = float(np.sqrt(ab))
    one_minus_ab = float(1.0 - ab)
    var0 = float(sigma0) ** 2
    z64 = z.astype(np.float64)
    mu64 = mu.astype(np.float64)
    denom = sqrt_ab * sqrt_ab * var0 + one_minus_ab
    x0 = (sqrt_ab * var0 * z64 + one_minus_ab * mu64) / denom
    eps = (z64 - sqrt_ab * x0) / np.sqrt(one_minus_ab)
    return eps.astype(np.float32)


def guided_eps(
    z: np.ndarray,
    mu_cond: np.ndarray,
    ab: float,
    sigma0: float,
    sigma_uncond: float,
    cfg_scale: float,
) -> np.ndarray:
    """CFG-combined prediction (1-s)*eps_uncond + s*eps_cond, where the
    unconditional scene has zero mean and a broad deviation."""
    eps_c = posterior_eps(z, mu_cond, ab, sigma0)
    if cfg_scale == 1.0:
        return eps_c
    eps_u = posterior_eps(z, np.zeros_like(mu_cond), ab, sigma_uncond)
    s = float(cfg_scale)
    out = (1.0 - s) * eps_u.astype(np.float64) + s * eps_c.astype(np.float64)
    return out.astype(np.float32)
