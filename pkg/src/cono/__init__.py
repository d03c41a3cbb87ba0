"""Deterministic long-video latent diffusion engine.

Long videos are produced clip by clip: the initial noise of the first clip
is permuted (look-back shuffles) to seed each following stage, guided frames
are pinned to the previous clip by timestep-gated noise replacement, and a
per-step regularization keeps the frame-averaged predicted noise of
consecutive clips close. A closed-form toy world makes the whole pipeline
verifiable on a desk; external models plug in over a byte-exact wire
protocol.
"""

__version__ = "0.1.0"

from .config import RunConfig, config_from_dict, load_config
from .engine import (
    ClipRecord,
    GuidanceMap,
    RegularizationTrace,
    StageConfig,
    apply_noise_replacement,
    apply_regularization,
    assemble_final,
    consistency_grad,
    extending_map,
    extending_shuffle,
    internal_map,
    internal_shuffle,
    run_first_clip,
    run_guided_stage,
    run_pipeline,
)
from .errors import (
    BridgeError,
    ConfigError,
    ConoError,
    InvalidArgumentError,
    NumericalDomainError,
    ProtocolError,
    StateError,
)
from .harness import DriftReport, adjacent_cosine, content_drift, finite_diff_grad, mc_posterior_oracle
from .latent import (
    FrameRange,
    LatentClip,
    SeededRng,
    concat_frames,
    flip_frames,
    frame_mean,
    mse,
    read_lat,
    sample_standard_normal,
    slice_frames,
    write_lat,
)
from .predictor import (
    AnalyticPredictor,
    BridgeSession,
    NoisePredictor,
    close_bridge,
    open_bridge,
    predict,
)
from .schedule import (
    NoiseSchedule,
    SamplerPlan,
    StepRef,
    add_noise,
    build_schedule,
    ddim_step,
    make_plan,
)
from .world import (
    Codec,
    PromptSpec,
    SceneSpec,
    analytic_eps,
    cfg_combine,
    decode,
    default_embedding,
    embed_lerp,
    encode,
    null_scene,
    prompt_from_id,
    prompt_to_scene,
)

__all__ = [
    "__version__",
    "AnalyticPredictor", "BridgeSession", "ClipRecord", "Codec", "DriftReport",
    "FrameRange", "GuidanceMap", "LatentClip", "NoisePredictor", "NoiseSchedule",
    "PromptSpec", "RegularizationTrace", "RunConfig", "SamplerPlan", "SceneSpec",
    "SeededRng", "StageConfig", "StepRef",
    "BridgeError", "ConfigError", "ConoError", "InvalidArgumentError",
    "NumericalDomainError", "ProtocolError", "StateError",
    "add_noise", "adjacent_cosine", "analytic_eps", "apply_noise_replacement",
    "apply_regularization", "assemble_final", "build_schedule", "cfg_combine",
    "close_bridge", "concat_frames", "config_from_dict", "consistency_grad",
    "content_drift", "decode", "default_embedding", "ddim_step", "embed_lerp",
    "encode", "extending_map", "extending_shuffle", "finite_diff_grad",
    "flip_frames", "frame_mean", "internal_map", "internal_shuffle",
    "load_config", "make_plan", "mc_posterior_oracle", "mse", "null_scene",
    "open_bridge", "predict", "prompt_from_id", "prompt_to_scene", "read_lat",
    "run_first_clip", "run_guided_stage", "run_pipeline",
    "sample_standard_normal", "slice_frames", "write_lat",
]
