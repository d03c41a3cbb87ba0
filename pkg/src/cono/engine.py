"""Long-video engine: noise shuffles, consistency regularization,
timestep-gated noise replacement, and the look-back stage orchestration.

A video longer than one clip is produced by re-denoising permutations of the
first clip's initial noise. Each expansion round runs three stages:

  extend    initial noise = extending_shuffle(prev z_T); frames [0, N1) are
            pinned to the previous clip's tail. Its frames never enter the
            final video; it exists to seed the round.
  internal  initial noise = internal_shuffle(extend z_T); both ends pinned,
            the middle [N1, N-N1) becomes the transition frames.
  extend2   extending shuffle again, pinned to the internal stage's tail;
            contributes all N frames.

Pinning works in two parts: the initial-noise shuffle places the source
frames' z_T at the target positions, and per-step noise replacement copies
the source frames' stored predicted noise over the target positions while
step_index >= Td. With replacement at every step the pinned trajectories
are bit-identical to their sources, because the DDIM update is elementwise.

Long-term consistency regularization nudges every frame's predicted noise
toward the previous stage's frame-mean ("content") before replacement, with
one exact property: the content difference contracts by 1 - 2*delta/(N*P)
per step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .errors import InvalidArgumentError, StateError
from .latent import FrameRange, LatentClip, SeededRng, concat_frames, sample_standard_normal, slice_frames
from .predictor import NoisePredictor, predict
from .schedule import NoiseSchedule, SamplerPlan, StepRef, ddim_step
from .world import CFG_SCALE_DEFAULT, PromptSpec

STAGE_TAGS = ("first", "extend", "internal", "extend2")
TD_UNIT_CHOICES = ("step_index", "raw_timestep")


@dataclass(frozen=True)
class StageConfig:
    """Knobs shared by the guided stages.

    N: frames per clip. N1: guided (pinned) frame count. N2: relocated frame
    count for the internal shuffle. Td: replacement gate; with td_units
    "step_index" (default) replacement is active while step_index >= Td,
    freeing exactly the last Td sampler steps, with "raw_timestep" the gate
    compares the schedule timestep instead. delta: regularization step size.
    """

    N: int = 16
    N1: int = 6
    N2: int = 8
    Td: int = 10
    delta: float = 140.0
    cfg_scale: float = CFG_SCALE_DEFAULT
    regularization_enabled: bool = True
    td_units: str = "step_index"

    def __post_init__(self) -> None:
        if self.N < 1:
            raise InvalidArgumentError(f"N must be >= 1, got {self.N}")
        if not 1 <= self.N1 <= self.N:
            raise InvalidArgumentError(f"N1 must be in [1, N={self.N}], got {self.N1}")
        if not 0 <= self.N2 <= self.N - self.N1:
            raise InvalidArgumentError(
                f"N2 must be in [0, N-N1={self.N - self.N1}], got {self.N2}"
            )
        if self.Td < 0:
            raise InvalidArgumentError(f"Td must be >= 0, got {self.Td}")
        if not (self.delta >= 0.0 and np.isfinite(self.delta)):
            raise InvalidArgumentError(f"delta must be a finite number >= 0, got {self.delta}")
        if self.td_units not in TD_UNIT_CHOICES:
            raise InvalidArgumentError(
                f"td_units must be one of {TD_UNIT_CHOICES}, got {self.td_units!r}"
            )


@dataclass(frozen=True, eq=False)
class ClipRecord:
    """Everything one denoising stage produced.

    stored_eps holds the predicted noise actually consumed by the sampler at
    each step (post-CFG, post-regularization, post-replacement), indexed by
    plan position (entry 0 is the noisiest step).
    """

    initial_noise: LatentClip
    final_latent: LatentClip
    stored_eps: tuple[LatentClip, ...]
    prompt_id: str
    stage_tag: str

    def __post_init__(self) -> None:
        if self.stage_tag not in STAGE_TAGS:
            raise InvalidArgumentError(f"stage_tag must be one of {STAGE_TAGS}, got {self.stage_tag!r}")
        dims = self.initial_noise.dims
        if self.final_latent.dims != dims or any(e.dims != dims for e in self.stored_eps):
            raise InvalidArgumentError("all latents of a ClipRecord must share dims")

    @property
    def n_frames(self) -> int:
        return self.initial_noise.n_frames

    def eps_at(self, plan_pos: int) -> LatentClip:
        if not 0 <= plan_pos < len(self.stored_eps):
            raise StateError(
                f"no stored noise for plan position {plan_pos} (have {len(self.stored_eps)} steps)"
            )
        return self.stored_eps[plan_pos]


@dataclass(frozen=True)
class GuidanceMap:
    """Pairs of (target range in the new clip, source range in the previous
    clip), equal lengths, disjoint targets."""

    pairs: tuple[tuple[FrameRange, FrameRange], ...]

    def __post_init__(self) -> None:
        covered: set[int] = set()
        for tgt, src in self.pairs:
            if len(tgt) != len(src):
                raise InvalidArgumentError(
                    f"target [{tgt.start},{tgt.end}) and source [{src.start},{src.end}) differ in length"
                )
            span = set(range(tgt.start, tgt.end))
            if covered & span:
                raise InvalidArgumentError("guidance target ranges overlap")
            covered |= span

    def check_clips(self, n_new: int, n_prev: int) -> None:
        for tgt, src in self.pairs:
            tgt.check_within(n_new)
            src.check_within(n_prev)


def extending_map(N: int, N1: int) -> GuidanceMap:
    """Head of the new clip pinned to the tail of the previous clip."""
    return GuidanceMap(((FrameRange(0, N1), FrameRange(N - N1, N)),))


def internal_map(N: int, N1: int, N2: int) -> GuidanceMap:
    """Both ends pinned: head to the previous head, tail to the relocated
    block [N1, N1+N2) of the previous clip."""
    return GuidanceMap(
        (
            (FrameRange(0, N1), FrameRange(0, N1)),
            (FrameRange(N - N2, N), FrameRange(N1, N1 + N2)),
        )
    )


@dataclass(frozen=True)
class RegularizationTrace:
    """Per-step content-loss values around the regularization update."""

    stage_tag: str
    g_before: tuple[float, ...]
    g_after: tuple[float, ...]

    @property
    def ratios(self) -> tuple[float, ...]:
        """g_after / g_before per step; 1.0 where g_before is 0."""
        return tuple(
            (ga / gb) if gb > 0.0 else 1.0 for gb, ga in zip(self.g_before, self.g_after)
        )


def _permute(z: LatentClip, perm: np.ndarray) -> LatentClip:
    return LatentClip(z.data[perm])


def extending_shuffle(z: LatentClip, N1: int) -> LatentClip:
    """Reverse all frames, then re-reverse the first N1: the previous tail
    lands at the head in order, the rest trail reversed.

    out[i] = in[N-N1+i] for i < N1, out[i] = in[N-1-i] for i >= N1.
    """
    n = z.n_frames
    if not 1 <= N1 <= n:
        raise InvalidArgumentError(f"N1 must be in [1, {n}], got {N1}")
    idx = np.arange(n)
    perm = np.where(idx < N1, n - N1 + idx, n - 1 - idx)
    return _permute(z, perm)


def internal_shuffle(z: LatentClip, N1: int, N2: int) -> LatentClip:
    """Move the block [N1, N1+N2) to the end, keeping everything else in
    order: out = in[0:N1] ++ in[N1+N2:N] ++ in[N1:N1+N2]."""
    n = z.n_frames
    if N1 < 1 or N2 < 1 or N1 + N2 > n:
        raise InvalidArgumentError(f"need N1 >= 1, N2 >= 1, N1+N2 <= {n}, got N1={N1}, N2={N2}")
    perm = np.concatenate(
        [np.arange(0, N1), np.arange(N1 + N2, n), np.arange(N1, N1 + N2)]
    )
    return _permute(z, perm)


def consistency_grad(eps_ref: LatentClip, eps_cur: LatentClip) -> LatentClip:
    """Gradient of the content loss wrt eps_cur, eps_ref held constant.

    The loss is the elementwise mean of (frame_mean(cur) - frame_mean(ref))
    squared, so every frame receives the same gradient map
    (2/(N*P)) * (content_cur - content_ref).
    """
    if eps_ref.dims != eps_cur.dims:
        raise InvalidArgumentError(f"dims mismatch: {eps_ref.dims} vs {eps_cur.dims}")
    n, p = eps_cur.n_frames, eps_cur.frame_size
    c_cur = K.frame_mean(eps_cur.as_2d()).astype(np.float64)
    c_ref = K.frame_mean(eps_ref.as_2d()).astype(np.float64)
    g = ((2.0 / (n * p)) * (c_cur - c_ref)).astype(np.float32)
    frame = g.reshape(eps_cur.data.shape[1:])
    return LatentClip(np.broadcast_to(frame, eps_cur.dims))


def apply_regularization(
    eps_cur: LatentClip, eps_ref: LatentClip, delta: float
) -> tuple[LatentClip, float, float]:
    """One gradient step eps_cur - delta*grad; returns (updated, g_before,
    g_after). The content difference scales by exactly 1 - 2*delta/(N*P)."""
    if eps_ref.dims != eps_cur.dims:
        raise InvalidArgumentError(f"dims mismatch: {eps_ref.dims} vs {eps_cur.dims}")
    if not (delta >= 0.0 and np.isfinite(delta)):
        raise InvalidArgumentError(f"delta must be a finite number >= 0, got {delta}")
    out2d, g_before, g_after = K.regularize(eps_cur.as_2d(), eps_ref.as_2d(), delta)
    return LatentClip(out2d.reshape(eps_cur.dims)), g_before, g_after


def _replacement_active(step: StepRef, Td: int, td_units: str) -> bool:
    if td_units == "raw_timestep":
        return step.timestep >= Td
    return step.step_index >= Td


def apply_noise_replacement(
    eps: LatentClip,
    prev: ClipRecord,
    gmap: GuidanceMap,
    step: StepRef,
    Td: int,
    plan_pos: int,
    td_units: str = "step_index",
) -> LatentClip:
    """Overwrite guided target frames with the previous clip's stored noise
    at the same sampler step, while the gate is active; otherwise return the
    input unchanged."""
    if not _replacement_active(step, Td, td_units):
        return eps
    src_eps = prev.eps_at(plan_pos)
    gmap.check_clips(eps.n_frames, src_eps.n_frames)
    out = eps.data.copy()
    for tgt, src in gmap.pairs:
        out[tgt.start:tgt.end] = src_eps.data[src.start:src.end]
    return LatentClip(out)


def _denoise(
    predictor: NoisePredictor,
    prompt: PromptSpec,
    z_T: LatentClip,
    plan: SamplerPlan,
    schedule: NoiseSchedule,
    cfg_scale: float,
    stage_tag: str,
    prev: Optional[ClipRecord] = None,
    gmap: Optional[GuidanceMap] = None,
    stage_cfg: Optional[StageConfig] = None,
) -> tuple[ClipRecord, RegularizationTrace]:
    """Shared DDIM loop. Per step: predict, regularize against the previous
    record (when enabled), replace gated frames, store the result, step."""
    z = z_T
    stored: list[LatentClip] = []
    g_before: list[float] = []
    g_after: list[float] = []
    for i in range(plan.steps):
        step = plan.step_ref(i)
        eps = predict(predictor, z, prompt, step, cfg_scale)
        if prev is not None and stage_cfg is not None:
            if stage_cfg.regularization_enabled:
                eps, gb, ga = apply_regularization(eps, prev.eps_at(i), stage_cfg.delta)
                g_before.append(gb)
                g_after.append(ga)
            if gmap is not None:
                eps = apply_noise_replacement(
                    eps, prev, gmap, step, stage_cfg.Td, i, stage_cfg.td_units
                )
        stored.append(eps)
        z = ddim_step(schedule, z, eps, step.timestep, plan.t_prev(i))
    record = ClipRecord(
        initial_noise=z_T,
        final_latent=z,
        stored_eps=tuple(stored),
        prompt_id=prompt.id,
        stage_tag=stage_tag,
    )
    trace = RegularizationTrace(stage_tag, tuple(g_before), tuple(g_after))
    return record, trace


def run_first_clip(
    predictor: NoisePredictor,
    prompt: PromptSpec,
    plan: SamplerPlan,
    schedule: NoiseSchedule,
    rng: SeededRng,
    cfg_scale: float = CFG_SCALE_DEFAULT,
) -> ClipRecord:
    """Denoise the first clip from fresh noise, no constraints."""
    z_T = sample_standard_normal(rng, predictor.dims)
    record, _ = _denoise(predictor, prompt, z_T, plan, schedule, cfg_scale, "first")
    return record


def run_guided_stage(
    predictor: NoisePredictor,
    prompt: PromptSpec,
    prev: ClipRecord,
    shuffle: str,
    cfg: StageConfig,
    plan: SamplerPlan,
    schedule: NoiseSchedule,
    stage_tag: Optional[str] = None,
) -> tuple[ClipRecord, RegularizationTrace]:
    """One guided stage against the immediately preceding record.

    shuffle selects the noise permutation and guidance map: "extending" pins
    [0, N1) to the previous tail, "internal" pins both ends. Regularization
    (when enabled) precedes replacement within every step.
    """
    if prev.n_frames != cfg.N:
        raise InvalidArgumentError(
            f"previous record has {prev.n_frames} frames but StageConfig.N = {cfg.N}"
        )
    if predictor.dims[0] != cfg.N:
        raise InvalidArgumentError(
            f"predictor expects {predictor.dims[0]} frames but StageConfig.N = {cfg.N}"
        )
    if len(prev.stored_eps) != plan.steps:
        raise StateError(
            f"previous record stores {len(prev.stored_eps)} steps, plan has {plan.steps}"
        )
    if cfg.td_units == "step_index" and cfg.Td > plan.steps:
        raise InvalidArgumentError(f"Td={cfg.Td} exceeds the {plan.steps}-step plan")
    if shuffle == "extending":
        z_T = extending_shuffle(prev.initial_noise, cfg.N1)
        gmap = extending_map(cfg.N, cfg.N1)
        tag = stage_tag or "extend"
    elif shuffle == "internal":
        if cfg.N2 < 1:
            raise InvalidArgumentError("internal stage needs N2 >= 1")
        z_T = internal_shuffle(prev.initial_noise, cfg.N1, cfg.N2)
        gmap = internal_map(cfg.N, cfg.N1, cfg.N2)
        tag = stage_tag or "internal"
    else:
        raise InvalidArgumentError(f"shuffle must be 'extending' or 'internal', got {shuffle!r}")
    if tag not in STAGE_TAGS:
        raise InvalidArgumentError(f"stage_tag must be one of {STAGE_TAGS}, got {tag!r}")
    return _denoise(
        predictor, prompt, z_T, plan, schedule, cfg.cfg_scale, tag,
        prev=prev, gmap=gmap, stage_cfg=cfg,
    )


_ROUND_TAGS = ("extend", "internal", "extend2")


def assemble_final(records: Sequence[ClipRecord], cfg: StageConfig) -> LatentClip:
    """Concatenate the first clip, then per round the internal stage's
    transition frames [N1, N-N1) and the full extend2 clip. The extend
    stage's frames are dropped. Total frames: N + m*(2N - 2*N1)."""
    records = list(records)
    if not records or records[0].stage_tag != "first":
        raise InvalidArgumentError("record sequence must start with the first clip")
    if (len(records) - 1) % 3 != 0:
        raise InvalidArgumentError(
            f"records must follow first + 3 per round, got {len(records)} records"
        )
    m = (len(records) - 1) // 3
    for r in range(m):
        tags = tuple(records[1 + 3 * r + k].stage_tag for k in range(3))
        if tags != _ROUND_TAGS:
            raise InvalidArgumentError(f"round {r} has stage tags {tags}, expected {_ROUND_TAGS}")
    if cfg.N - 2 * cfg.N1 < 0:
        raise InvalidArgumentError(
            f"assembly needs N1 <= N/2 (transition range [N1, N-N1)), got N={cfg.N}, N1={cfg.N1}"
        )
    parts = [records[0].final_latent]
    for r in range(m):
        internal = records[1 + 3 * r + 1]
        extend2 = records[1 + 3 * r + 2]
        if cfg.N - 2 * cfg.N1 > 0:
            parts.append(slice_frames(internal.final_latent, FrameRange(cfg.N1, cfg.N - cfg.N1)))
        parts.append(extend2.final_latent)
    return concat_frames(parts)


def run_pipeline(
    predictor: NoisePredictor,
    prompts: Sequence[PromptSpec],
    cfg: StageConfig,
    plan: SamplerPlan,
    schedule: NoiseSchedule,
    rng: SeededRng,
) -> tuple[LatentClip, list[ClipRecord], list[RegularizationTrace]]:
    """First clip under prompts[0], then one extend/internal/extend2 round
    per following prompt (repeat a prompt to extend the same scene), each
    stage guided by its immediate predecessor; ends with assembly."""
    prompts = list(prompts)
    if not prompts:
        raise InvalidArgumentError("need at least one prompt")
    records = [run_first_clip(predictor, prompts[0], plan, schedule, rng, cfg.cfg_scale)]
    traces: list[RegularizationTrace] = []
    for prompt in prompts[1:]:
        for shuffle, tag in (("extending", "extend"), ("internal", "internal"), ("extending", "extend2")):
            record, trace = run_guided_stage(
                predictor, prompt, records[-1], shuffle, cfg, plan, schedule, stage_tag=tag
            )
            records.append(record)
            traces.append(trace)
    final = assemble_final(records, cfg)
    return final, records, traces
