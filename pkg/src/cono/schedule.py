"""Noise schedules and the deterministic DDIM update.

The forward process is z_t = sqrt(abar_t)*z0 + sqrt(1-abar_t)*eps with
abar_t the cumulative product of alphas. Sampling runs the eta=0 DDIM
recursion over a descending subset of timesteps; with eta fixed at 0 the
whole trajectory is a deterministic function of the initial noise and the
predicted eps at each step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .errors import InvalidArgumentError, NumericalDomainError
from .latent import LatentClip

DEFAULT_T = 1000
DEFAULT_BETA_START = 0.00085
DEFAULT_BETA_END = 0.012
DEFAULT_KIND = "scaled_linear"


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-timestep betas with derived alphas and cumulative alpha_bars."""

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        betas = np.array(self.betas, dtype=np.float64, copy=True)
        if betas.ndim != 1 or betas.size < 1:
            raise InvalidArgumentError("betas must be a non-empty 1-d array")
        if not ((betas > 0.0) & (betas < 1.0)).all():
            raise InvalidArgumentError("every beta must lie strictly in (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        if not (alpha_bars > 0.0).all():
            raise NumericalDomainError("alpha_bar underflowed to 0; schedule too long or too noisy")
        if not (np.diff(alpha_bars) < 0.0).all():
            raise InvalidArgumentError("alpha_bars must be strictly decreasing")
        for name, arr in (("betas", betas), ("alphas", alphas), ("alpha_bars", alpha_bars)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return self.betas.size

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t < self.T:
            raise InvalidArgumentError(f"timestep {t} out of range [0, {self.T})")
        return float(self.alpha_bars[t])


def build_schedule(
    T: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
    kind: str = DEFAULT_KIND,
) -> NoiseSchedule:
    """Linear or scaled-linear (linear in sqrt(beta)) beta ramp over T steps."""
    if T < 1:
        raise InvalidArgumentError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise InvalidArgumentError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    elif kind == "scaled_linear":
        betas = np.linspace(math.sqrt(beta_start), math.sqrt(beta_end), T, dtype=np.float64) ** 2
    else:
        raise InvalidArgumentError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(betas)


@dataclass(frozen=True)
class StepRef:
    """Position within a sampling run.

    step_index counts from the end: the final update has step_index 0, the
    first has steps-1. timestep is the schedule timestep consumed there.
    """

    step_index: int
    timestep: int


@dataclass(frozen=True, eq=False)
class SamplerPlan:
    """Descending timesteps visited by one DDIM run; eta is fixed at 0."""

    timesteps: np.ndarray
    eta: float = 0.0

    def __post_init__(self) -> None:
        ts = np.array(self.timesteps, dtype=np.int64, copy=True)
        if ts.ndim != 1 or ts.size < 1:
            raise InvalidArgumentError("timesteps must be a non-empty 1-d array")
        if ts.size > 1 and not (np.diff(ts) < 0).all():
            raise InvalidArgumentError("timesteps must be strictly decreasing")
        if ts[-1] < 0:
            raise InvalidArgumentError("timesteps must be non-negative")
        if self.eta != 0.0:
            raise InvalidArgumentError("only eta=0 (deterministic) sampling is supported")
        ts.setflags(write=False)
        object.__setattr__(self, "timesteps", ts)

    @property
    def steps(self) -> int:
        return self.timesteps.size

    def step_ref(self, i: int) -> StepRef:
        """StepRef for the i-th visited timestep (i=0 is the noisiest)."""
        if not 0 <= i < self.steps:
            raise InvalidArgumentError(f"plan position {i} out of range [0, {self.steps})")
        return StepRef(step_index=self.steps - 1 - i, timestep=int(self.timesteps[i]))

    def t_prev(self, i: int) -> Optional[int]:
        """Timestep the i-th update lands on, None for the terminal update."""
        if not 0 <= i < self.steps:
            raise InvalidArgumentError(f"plan position {i} out of range [0, {self.steps})")
        if i == self.steps - 1:
            return None
        return int(self.timesteps[i + 1])


def make_plan(schedule: NoiseSchedule, steps: int) -> SamplerPlan:
    """Evenly strided descending plan starting at the last timestep.

    timesteps[i] = T-1 - i*(T // steps), so steps=T visits every timestep
    and steps=1 visits only T-1.
    """
    if not 1 <= steps <= schedule.T:
        raise InvalidArgumentError(f"steps must be in [1, {schedule.T}], got {steps}")
    stride = schedule.T // steps
    ts = schedule.T - 1 - stride * np.arange(steps, dtype=np.int64)
    return SamplerPlan(ts)


def add_noise(schedule: NoiseSchedule, z0: LatentClip, eps: LatentClip, t: int) -> LatentClip:
    """Forward marginal: sqrt(abar_t)*z0 + sqrt(1-abar_t)*eps."""
    if z0.dims != eps.dims:
        raise InvalidArgumentError(f"dims mismatch: {z0.dims} vs {eps.dims}")
    ab = schedule.alpha_bar(t)
    return LatentClip(K.affine2(z0.data, eps.data, math.sqrt(ab), math.sqrt(1.0 - ab)))


def coeffs_from_alpha_bars(ab_t: float, ab_prev: float) -> tuple[float, float]:
    """(A, B) such that the eta=0 DDIM update is A*z_t + B*eps_hat.

    Fusing z_prev = sqrt(ab_prev)*x0_hat + sqrt(1-ab_prev)*eps_hat with
    x0_hat = (z_t - sqrt(1-ab_t)*eps_hat)/sqrt(ab_t) gives A =
    sqrt(ab_prev/ab_t) and B = sqrt(1-ab_prev) - A*sqrt(1-ab_t). Equal
    alpha_bars give exactly (1, 0): a bit-exact no-op.
    """
    if not 0.0 < ab_t <= 1.0 or not 0.0 < ab_prev <= 1.0:
        raise NumericalDomainError(f"alpha_bars must lie in (0, 1], got {ab_t}, {ab_prev}")
    a = math.sqrt(ab_prev / ab_t)
    b = math.sqrt(1.0 - ab_prev) - a * math.sqrt(1.0 - ab_t)
    return a, b


def ddim_coeffs(schedule: NoiseSchedule, t: int, t_prev: Optional[int]) -> tuple[float, float]:
    """Update coefficients between two plan timesteps; t_prev=None is the
    terminal update onto abar=1, which returns the reconstruction x0_hat."""
    ab_t = schedule.alpha_bar(t)
    if t_prev is None:
        ab_prev = 1.0
    else:
        if t_prev >= t:
            raise InvalidArgumentError(f"t_prev must be < t, got t_prev={t_prev}, t={t}")
        ab_prev = schedule.alpha_bar(t_prev)
    return coeffs_from_alpha_bars(ab_t, ab_prev)


def ddim_step(
    schedule: NoiseSchedule,
    z_t: LatentClip,
    eps_hat: LatentClip,
    t: int,
    t_prev: Optional[int],
) -> LatentClip:
    """One deterministic DDIM update from timestep t to t_prev.

    Elementwise, so it commutes with any frame permutation: shuffling frames
    then stepping equals stepping then shuffling.
    """
    if z_t.dims != eps_hat.dims:
        raise InvalidArgumentError(f"dims mismatch: {z_t.dims} vs {eps_hat.dims}")
    a, b = ddim_coeffs(schedule, t, t_prev)
    return LatentClip(K.affine2(z_t.data, eps_hat.data, a, b))
