"""Independent oracles and consistency metrics.

The oracles here deliberately avoid the implementations they check: the
Monte-Carlo posterior estimate and the finite-difference gradient recompute
everything from definitions using plain float64 numpy, sharing only the
latent container with the code under test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError
from .latent import LatentClip, SeededRng, frame_mean, mse
from .schedule import NoiseSchedule
from .world import Codec, SceneSpec, decode

_MIN_MC_SAMPLES = 10_000


def mc_posterior_oracle(
    scene: SceneSpec,
    t: int,
    schedule: NoiseSchedule,
    probe: LatentClip,
    samples: int,
    rng: SeededRng,
    batch: int = 20_000,
) -> tuple[LatentClip, LatentClip]:
    """Monte-Carlo estimate of E[eps | z_t = probe] with its standard error.

    Draws z0 from the scene prior, weights each draw by the likelihood of
    the probe under the forward marginal, and self-normalizes. Elements are
    independent, so everything runs vectorized per element. The standard
    error uses the usual delta-method formula for ratio estimators.
    """
    if samples < _MIN_MC_SAMPLES:
        raise InvalidArgumentError(f"need at least {_MIN_MC_SAMPLES} samples, got {samples}")
    if scene.mu.dims != probe.dims:
        raise InvalidArgumentError(f"scene dims {scene.mu.dims} do not match probe {probe.dims}")
    ab = schedule.alpha_bar(t)
    sab = math.sqrt(ab)
    var_t = 1.0 - ab
    mu = scene.mu.data.astype(np.float64)
    z = probe.data.astype(np.float64)
    dims = z.shape

    # streaming accumulators; the error term expands as
    # sum(w^2 (e - est)^2) = sum(w^2 e^2) - 2 est sum(w^2 e) + est^2 sum(w^2)
    s_w = np.zeros(dims)
    s_we = np.zeros(dims)
    s_w2 = np.zeros(dims)
    s_w2e = np.zeros(dims)
    s_w2e2 = np.zeros(dims)
    gen = rng.generator
    done = 0
    while done < samples:
        b = min(batch, samples - done)
        z0 = mu[None] + scene.sigma0 * gen.standard_normal((b,) + dims)
        resid = z - sab * z0
        # scale-free log weights; the constant factor cancels on normalization
        logw = -(resid * resid) / (2.0 * var_t)
        w = np.exp(logw)
        eps = resid / math.sqrt(var_t)
        s_w += w.sum(axis=0)
        s_we += (w * eps).sum(axis=0)
        s_w2 += (w * w).sum(axis=0)
        s_w2e += (w * w * eps).sum(axis=0)
        s_w2e2 += (w * w * eps * eps).sum(axis=0)
        done += b
    est = s_we / s_w
    var_num = np.maximum(s_w2e2 - 2.0 * est * s_w2e + est * est * s_w2, 0.0)
    se = np.sqrt(var_num) / s_w
    return LatentClip(est.astype(np.float32)), LatentClip(se.astype(np.float32))


def _content_loss(cur64: np.ndarray, ref_content64: np.ndarray) -> float:
    """Definition of the content loss, recomputed from scratch in float64."""
    diff = cur64.mean(axis=0) - ref_content64
    return float(np.mean(diff * diff))


def finite_diff_grad(eps_ref: LatentClip, eps_cur: LatentClip, h: float) -> LatentClip:
    """Central finite differences of the content loss wrt every element of
    eps_cur, in float64."""
    if eps_ref.dims != eps_cur.dims:
        raise InvalidArgumentError(f"dims mismatch: {eps_ref.dims} vs {eps_cur.dims}")
    if not h > 0.0:
        raise InvalidArgumentError(f"h must be > 0, got {h}")
    ref_content = eps_ref.data.astype(np.float64).mean(axis=0)
    base = eps_cur.data.astype(np.float64)
    out = np.empty_like(base)
    it = np.nditer(base, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        bumped = base.copy()
        bumped[idx] = base[idx] + h
        g_plus = _content_loss(bumped, ref_content)
        bumped[idx] = base[idx] - h
        g_minus = _content_loss(bumped, ref_content)
        out[idx] = (g_plus - g_minus) / (2.0 * h)
    return LatentClip(out.astype(np.float32))


@dataclass(frozen=True)
class DriftReport:
    """Per-clip content summaries and their distances to the first clip."""

    contents: tuple[LatentClip, ...]
    drifts: tuple[float, ...]
    cosines: tuple[Optional[float], ...]

    def __post_init__(self) -> None:
        if any(d < 0.0 for d in self.drifts):
            raise InvalidArgumentError("drift distances must be >= 0")
        if any(c is not None and not -1.0 - 1e-9 <= c <= 1.0 + 1e-9 for c in self.cosines):
            raise InvalidArgumentError("cosines must lie in [-1, 1]")


def content_drift(records: Sequence, codec: Codec, final: Optional[LatentClip] = None) -> DriftReport:
    """Content summary (frame mean of the decoded final latent) per clip and
    its mse distance to the first clip's. When the assembled video is
    supplied, its adjacent-frame cosines are included."""
    records = list(records)
    if len(records) < 2:
        raise InvalidArgumentError(f"need at least 2 records, got {len(records)}")
    contents = tuple(frame_mean(decode(codec, r.final_latent)) for r in records)
    drifts = tuple(mse(c, contents[0]) for c in contents)
    cosines: tuple[Optional[float], ...] = ()
    if final is not None:
        cosines = tuple(adjacent_cosine(final))
    return DriftReport(contents=contents, drifts=drifts, cosines=cosines)


def adjacent_cosine(final: LatentClip) -> list[Optional[float]]:
    """Cosine similarity of each consecutive pair of flattened frames.

    A pair involving a zero-norm frame yields None (undefined), never NaN.
    """
    if final.n_frames < 2:
        raise InvalidArgumentError("need at least 2 frames")
    flat = final.data.reshape(final.n_frames, -1).astype(np.float64)
    norms = np.sqrt((flat * flat).sum(axis=1))
    out: list[Optional[float]] = []
    for i in range(final.n_frames - 1):
        if norms[i] == 0.0 or norms[i + 1] == 0.0:
            out.append(None)
        else:
            out.append(float(np.dot(flat[i], flat[i + 1]) / (norms[i] * norms[i + 1])))
    return out


def cosine_median(cosines: Sequence[Optional[float]]) -> float:
    """Median of the defined entries."""
    vals = [c for c in cosines if c is not None]
    if not vals:
        raise InvalidArgumentError("no defined cosine entries")
    return float(np.median(vals))
