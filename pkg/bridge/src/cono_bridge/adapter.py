"""Adapter configuration and the built-in echo model.

The echo model answers every predict request with the closed-form
posterior noise for the toy world, so a client talking to this process
gets byte-level protocol conformance and numerically faithful predictions
without any model weights. A real model would plug in behind the same
``predict(prompt_id, t, step_index, cfg_scale, z)`` call.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import world
from .errors import BridgeAdapterError, ModelError


@dataclass(frozen=True)
class AdapterConfig:
    """Everything the serving loop needs to know up front.

    shape is the latent geometry (frames, channels, height, width) this
    process advertises in its handshake; every payload in either direction
    is exactly prod(shape) float32 values. model and checkpoint identify a
    real backing model when one is used; the echo model ignores them.
    prompt_map optionally maps prompt ids to replacement text or to
    explicit 8-number embeddings.
    """

    shape: tuple[int, int, int, int]
    model: Optional[str] = None
    checkpoint: Optional[str] = None
    device: str = "cpu"
    prompt_map: Optional[str] = None
    sigma0: float = world.SIGMA0_DEFAULT
    sigma_uncond: float = world.SIGMA_UNCOND_DEFAULT
    schedule_steps: int = world.DEFAULT_T
    beta_start: float = world.DEFAULT_BETA_START
    beta_end: float = world.DEFAULT_BETA_END
    schedule_kind: str = world.DEFAULT_KIND

    def __post_init__(self) -> None:
        if len(self.shape) != 4 or any(
            not isinstance(d, int) or isinstance(d, bool) or d < 1 for d in self.shape
        ):
            raise BridgeAdapterError(f"shape must be four positive ints, got {self.shape!r}")
        if not self.device or not isinstance(self.device, str):
            raise BridgeAdapterError(f"device must be a non-empty string, got {self.device!r}")
        if not (self.sigma0 > 0.0 and self.sigma_uncond > 0.0):
            raise BridgeAdapterError("sigma0 and sigma_uncond must be positive")


def load_prompt_map(path: str) -> dict[str, object]:
    """Read a JSON object mapping prompt ids to either replacement text
    (a string) or an explicit embedding (a list of numbers)."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise BridgeAdapterError(f"cannot read prompt map {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BridgeAdapterError(f"prompt map {path!r} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise BridgeAdapterError(f"prompt map {path!r} must be a JSON object")
    for key, value in raw.items():
        if isinstance(value, str):
            continue
        if isinstance(value, list) and len(value) >= world.EMBED_LEN and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            continue
        raise BridgeAdapterError(
            f"prompt map entry {key!r} must be text or a list of at least "
            f"{world.EMBED_LEN} numbers"
        )
    return raw


@dataclass
class EchoModel:
    """Closed-form stand-in model.

    fail_prompt is a testing hook: requests whose prompt id matches it
    raise ModelError, which the server reports as an error response while
    keeping the session alive.
    """

    config: AdapterConfig
    fail_prompt: Optional[str] = None
    _alpha_bars: np.ndarray = field(init=False, repr=False)
    _prompt_map: dict = field(init=False, repr=False)
    _scenes: dict = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._alpha_bars = world.alpha_bars(
            self.config.schedule_steps,
            self.config.beta_start,
            self.config.beta_end,
            self.config.schedule_kind,
        )
        self._prompt_map = (
            load_prompt_map(self.config.prompt_map) if self.config.prompt_map else {}
        )
        self._scenes = {}

    def _embedding(self, prompt_id: str) -> np.ndarray:
        mapped = self._prompt_map.get(prompt_id, prompt_id)
        if isinstance(mapped, str):
            return world.embedding_from_text(mapped)
        return world.check_embedding(mapped)

    def _scene(self, prompt_id: str) -> np.ndarray:
        cached = self._scenes.get(prompt_id)
        if cached is None:
            emb = self._embedding(prompt_id)
            cached = world.scene_mean(emb, self.config.shape)
            self._scenes[prompt_id] = cached
        return cached

    def predict(
        self, prompt_id: str, t: int, step_index: int, cfg_scale: float, z: np.ndarray
    ) -> np.ndarray:
        if self.fail_prompt is not None and prompt_id == self.fail_prompt:
            raise ModelError(f"injected failure for prompt {prompt_id!r}")
        if not 0 <= t < self._alpha_bars.shape[0]:
            raise ModelError(
                f"timestep {t} outside schedule of length {self._alpha_bars.shape[0]}"
            )
        ab = float(self._alpha_bars[t])
        return world.guided_eps(
            z,
            self._scene(prompt_id),
            ab,
            self.config.sigma0,
            self.config.sigma_uncond,
            float(cfg_scale),
        )
