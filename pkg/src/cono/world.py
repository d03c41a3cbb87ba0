"""Toy video world standing in for text conditioning.

A prompt is an 8-number embedding describing a scene: a smooth static
background plus an isotropic Gaussian blob translating linearly with
periodic wrap. The clean video mean is a deterministic function of the
embedding, so the Bayes-optimal noise predictor has a closed form and the
whole sampling stack can be verified at desk scale.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K
from .errors import InvalidArgumentError, NumericalDomainError
from .latent import LatentClip
from .schedule import NoiseSchedule

EMBED_LEN = 8
SIGMA0_DEFAULT = 0.3
SIGMA_UNCOND = 2.0
CFG_SCALE_DEFAULT = 7.5

# Embedding layout (index: meaning)
_BACKGROUND_ID = 0
_BLOB_AMPLITUDE = 1
_BLOB_START_X = 2
_BLOB_START_Y = 3
_VELOCITY_X = 4
_VELOCITY_Y = 5
_BLOB_RADIUS = 6
_RESERVED = 7


@dataclass(frozen=True, eq=False)
class PromptSpec:
    """Named scene embedding.

    The embedding is (background_id, blob_amplitude, blob_start_x,
    blob_start_y, velocity_x, velocity_y, blob_radius, reserved); vectors
    longer than 8 carry extra reserved entries.
    """

    id: str
    embedding: np.ndarray

    def __post_init__(self) -> None:
        emb = np.array(self.embedding, dtype=np.float64, copy=True)
        if emb.ndim != 1 or emb.size < EMBED_LEN:
            raise InvalidArgumentError(
                f"embedding must be a vector of at least {EMBED_LEN} numbers, got shape {emb.shape}"
            )
        if not np.isfinite(emb).all():
            raise InvalidArgumentError("embedding contains non-finite values")
        if emb[_BLOB_RADIUS] <= 0.0:
            raise InvalidArgumentError(f"blob_radius must be > 0, got {emb[_BLOB_RADIUS]}")
        emb.setflags(write=False)
        object.__setattr__(self, "embedding", emb)

    @property
    def background_id(self) -> int:
        return int(round(self.embedding[_BACKGROUND_ID]))

    @property
    def blob_amplitude(self) -> float:
        return float(self.embedding[_BLOB_AMPLITUDE])

    @property
    def blob_start(self) -> tuple[float, float]:
        return float(self.embedding[_BLOB_START_X]), float(self.embedding[_BLOB_START_Y])

    @property
    def velocity(self) -> tuple[float, float]:
        return float(self.embedding[_VELOCITY_X]), float(self.embedding[_VELOCITY_Y])

    @property
    def blob_radius(self) -> float:
        return float(self.embedding[_BLOB_RADIUS])


def default_embedding(prompt_id: str) -> np.ndarray:
    """Deterministic embedding for ids missing from a prompt library.

    Derived from sha256 of the UTF-8 id, so any independent implementation
    can reproduce it: with d = sha256(id), the fields are
    background_id = d[0] % 8, blob_amplitude = 1 + d[1]/255,
    start_x = d[2] % 16, start_y = d[3] % 16,
    velocity_x = d[4] % 5 - 2, velocity_y = d[5] % 5 - 2,
    blob_radius = 1.5 + 1.5*d[6]/255, reserved = 0.
    """
    d = hashlib.sha256(prompt_id.encode("utf-8")).digest()
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


def prompt_from_id(prompt_id: str, library: dict[str, Sequence[float]] | None = None) -> PromptSpec:
    """Resolve an id against a prompt library, falling back to the
    documented sha256 derivation."""
    if library is not None and prompt_id in library:
        return PromptSpec(prompt_id, np.asarray(library[prompt_id], dtype=np.float64))
    return PromptSpec(prompt_id, default_embedding(prompt_id))


@dataclass(frozen=True, eq=False)
class SceneSpec:
    """Clean video mean plus the per-element data standard deviation."""

    mu: LatentClip
    sigma0: float

    def __post_init__(self) -> None:
        if not (self.sigma0 > 0.0 and np.isfinite(self.sigma0)):
            raise InvalidArgumentError(f"sigma0 must be a positive finite number, got {self.sigma0}")


def _background(background_id: int, frame_dims: tuple[int, int, int]) -> np.ndarray:
    """Smooth low-frequency field, a fixed function of background_id."""
    c, h, w = frame_dims
    gen = np.random.Generator(np.random.PCG64(background_id & 0xFFFFFFFF))
    yy = np.arange(h, dtype=np.float64)[:, None] / h
    xx = np.arange(w, dtype=np.float64)[None, :] / w
    out = np.zeros((c, h, w), np.float64)
    for ch in range(c):
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
    cx: float, cy: float, amplitude: float, radius: float, frame_dims: tuple[int, int, int]
) -> np.ndarray:
    """Isotropic Gaussian bump centred at (cx, cy) with periodic wrap,
    identical across channels."""
    c, h, w = frame_dims
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    # shortest wrapped offsets
    dx = np.mod(xs - cx + w / 2.0, w) - w / 2.0
    dy = np.mod(ys - cy + h / 2.0, h) - h / 2.0
    bump = amplitude * np.exp(-(dx * dx + dy * dy) / (2.0 * radius * radius))
    return np.broadcast_to(bump, (c, h, w))


def prompt_to_scene(
    prompt: PromptSpec,
    dims: Sequence[int],
    n_frames: int,
    sigma0: float = SIGMA0_DEFAULT,
) -> SceneSpec:
    """Deterministic clean-video mean for a prompt.

    dims may be the (channels, height, width) of one frame or a full
    (frames, channels, height, width) tuple, in which case the leading entry
    is ignored in favour of n_frames. Frame n shows the blob at
    start + n*velocity, wrapped periodically.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) == 4:
        frame_dims = dims[1:]
    elif len(dims) == 3:
        frame_dims = dims
    else:
        raise InvalidArgumentError(f"dims must have 3 or 4 entries, got {len(dims)}")
    if min(frame_dims) < 1 or n_frames < 1:
        raise InvalidArgumentError(f"dims {frame_dims} and n_frames {n_frames} must all be >= 1")
    bg = _background(prompt.background_id, frame_dims)
    sx, sy = prompt.blob_start
    vx, vy = prompt.velocity
    frames = np.empty((n_frames,) + frame_dims, np.float64)
    for n in range(n_frames):
        frames[n] = bg + _blob(
            sx + n * vx, sy + n * vy, prompt.blob_amplitude, prompt.blob_radius, frame_dims
        )
    return SceneSpec(mu=LatentClip(frames), sigma0=float(sigma0))


def null_scene(dims: Sequence[int], n_frames: int, sigma: float = SIGMA_UNCOND) -> SceneSpec:
    """Unconditional scene: zero mean with a broad standard deviation."""
    dims = tuple(int(d) for d in dims)
    frame_dims = dims[1:] if len(dims) == 4 else dims
    mu = LatentClip(np.zeros((n_frames,) + tuple(frame_dims), np.float32))
    return SceneSpec(mu=mu, sigma0=float(sigma))


def embed_lerp(e1: np.ndarray, e2: np.ndarray, omega: float) -> np.ndarray:
    """Affine interpolation between two embeddings, exact at both ends."""
    a = np.asarray(e1, dtype=np.float64)
    b = np.asarray(e2, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"embedding length mismatch: {a.shape} vs {b.shape}")
    return (1.0 - omega) * a + omega * b


def analytic_eps(scene: SceneSpec, z_t: LatentClip, t: int, schedule: NoiseSchedule) -> LatentClip:
    """Bayes-optimal noise prediction for the Gaussian world.

    With z_t = sqrt(ab)*z0 + sqrt(1-ab)*eps and z0 ~ N(mu, sigma0^2)
    elementwise, the posterior mean of z0 is (sqrt(ab)*sigma0^2*z_t +
    (1-ab)*mu) / (ab*sigma0^2 + 1-ab) and the implied noise is
    (z_t - sqrt(ab)*E[z0|z_t]) / sqrt(1-ab).
    """
    if scene.mu.dims != z_t.dims:
        raise InvalidArgumentError(f"scene dims {scene.mu.dims} do not match z_t dims {z_t.dims}")
    ab = schedule.alpha_bar(t)
    if ab >= 1.0:
        raise NumericalDomainError(f"alpha_bar({t}) = {ab}; no noise to predict")
    out = K.posterior_eps(
        z_t.data, scene.mu.data, float(np.sqrt(ab)), float(1.0 - ab), scene.sigma0**2
    )
    return LatentClip(out)


def cfg_combine(eps_uncond: LatentClip, eps_cond: LatentClip, s: float) -> LatentClip:
    """Guided combination eps_u + s*(eps_c - eps_u), computed as
    (1-s)*eps_u + s*eps_c so s=0 and s=1 return the inputs bit-exactly."""
    if eps_uncond.dims != eps_cond.dims:
        raise InvalidArgumentError(f"dims mismatch: {eps_uncond.dims} vs {eps_cond.dims}")
    return LatentClip(K.affine2(eps_uncond.data, eps_cond.data, 1.0 - s, s))


@dataclass(frozen=True)
class Codec:
    """Latent <-> pixel mapping; only the identity codec is provided."""

    kind: str = "identity"

    def __post_init__(self) -> None:
        if self.kind != "identity":
            raise InvalidArgumentError(f"unknown codec kind {self.kind!r}")


def encode(codec: Codec, x: LatentClip) -> LatentClip:
    return x


def decode(codec: Codec, z: LatentClip) -> LatentClip:
    return z
