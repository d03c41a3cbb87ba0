"""Run configuration: JSON loading, validation, canonical hashing.

Every module precondition a run depends on is validated here, before any
compute, with diagnostics naming the offending key. Unknown keys are
rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Optional

from .errors import ConfigError
from .schedule import DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_KIND, DEFAULT_T
from .world import CFG_SCALE_DEFAULT, SIGMA0_DEFAULT, SIGMA_UNCOND

_SCHEDULE_KINDS = ("linear", "scaled_linear")
_TD_UNITS = ("step_index", "raw_timestep")
_PREDICTORS = ("analytic", "bridge")


@dataclass
class RunConfig:
    prompts: list[str] = field(default_factory=list)
    T: int = DEFAULT_T
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    schedule_kind: str = DEFAULT_KIND
    steps: int = 50
    N: int = 16
    N1: int = 6
    N2: int = 8
    Td: int = 10
    delta: float = 140.0
    cfg_scale: float = CFG_SCALE_DEFAULT
    regularization: bool = True
    td_units: str = "step_index"
    dims: list[int] = field(default_factory=lambda: [16, 2, 16, 16])
    seed: int = 0
    sigma0: float = SIGMA0_DEFAULT
    sigma_uncond: float = SIGMA_UNCOND
    expansions: Optional[int] = None
    predictor: str = "analytic"
    bridge_cmd: Optional[str] = None
    prompt_library: Optional[str] = None
    out_dir: str = "out"

    def validate(self) -> None:
        def fail(key: str, why: str) -> None:
            raise ConfigError(f"config key {key!r}: {why}")

        if not isinstance(self.prompts, list) or not self.prompts:
            fail("prompts", "must be a non-empty list of prompt ids")
        if not all(isinstance(p, str) and p for p in self.prompts):
            fail("prompts", "every entry must be a non-empty string")
        if not isinstance(self.T, int) or self.T < 1:
            fail("T", f"must be an integer >= 1, got {self.T!r}")
        if not 0.0 < self.beta_start <= self.beta_end < 1.0:
            fail("beta_start", f"need 0 < beta_start <= beta_end < 1, got {self.beta_start}, {self.beta_end}")
        if self.schedule_kind not in _SCHEDULE_KINDS:
            fail("schedule_kind", f"must be one of {_SCHEDULE_KINDS}, got {self.schedule_kind!r}")
        if not isinstance(self.steps, int) or not 1 <= self.steps <= self.T:
            fail("steps", f"must be an integer in [1, T={self.T}], got {self.steps!r}")
        if not isinstance(self.N, int) or self.N < 2:
            fail("N", f"must be an integer >= 2, got {self.N!r}")
        if not isinstance(self.N1, int) or not 1 <= self.N1 < self.N:
            fail("N1", f"must be an integer in [1, N={self.N}), got {self.N1!r}")
        if not isinstance(self.N2, int) or not 1 <= self.N2 <= self.N - self.N1:
            fail("N2", f"must be an integer in [1, N-N1={self.N - self.N1}], got {self.N2!r}")
        if not isinstance(self.Td, int) or self.Td < 0:
            fail("Td", f"must be an integer >= 0, got {self.Td!r}")
        if self.td_units not in _TD_UNITS:
            fail("td_units", f"must be one of {_TD_UNITS}, got {self.td_units!r}")
        if self.td_units == "step_index" and self.Td > self.steps:
            fail("Td", f"must be <= steps={self.steps} in step_index units, got {self.Td}")
        if not (isinstance(self.delta, (int, float)) and math.isfinite(self.delta) and self.delta >= 0):
            fail("delta", f"must be a finite number >= 0, got {self.delta!r}")
        if not (isinstance(self.cfg_scale, (int, float)) and math.isfinite(self.cfg_scale)):
            fail("cfg_scale", f"must be a finite number, got {self.cfg_scale!r}")
        if not isinstance(self.regularization, bool):
            fail("regularization", f"must be true or false, got {self.regularization!r}")
        if (
            not isinstance(self.dims, list)
            or len(self.dims) != 4
            or not all(isinstance(d, int) and d >= 1 for d in self.dims)
        ):
            fail("dims", f"must be 4 positive integers [frames, channels, height, width], got {self.dims!r}")
        if self.dims[0] != self.N:
            fail("dims", f"frame count {self.dims[0]} must equal N={self.N}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            fail("seed", f"must be an integer in [0, 2**64), got {self.seed!r}")
        if not (isinstance(self.sigma0, (int, float)) and self.sigma0 > 0):
            fail("sigma0", f"must be > 0, got {self.sigma0!r}")
        if not (isinstance(self.sigma_uncond, (int, float)) and self.sigma_uncond > 0):
            fail("sigma_uncond", f"must be > 0, got {self.sigma_uncond!r}")
        if self.expansions is not None:
            if not isinstance(self.expansions, int) or self.expansions < 0:
                fail("expansions", f"must be an integer >= 0, got {self.expansions!r}")
            if self.expansions < len(self.prompts) - 1:
                fail(
                    "expansions",
                    f"{self.expansions} is fewer rounds than the {len(self.prompts)} prompts imply",
                )
        if self.predictor not in _PREDICTORS:
            fail("predictor", f"must be one of {_PREDICTORS}, got {self.predictor!r}")
        if self.predictor == "bridge" and not self.bridge_cmd:
            fail("bridge_cmd", "required when predictor is 'bridge'")

    def effective_prompt_ids(self) -> list[str]:
        """Prompt id per clip: the listed prompts, padded by repeating the
        last one until there are 1 + expansions entries."""
        seq = list(self.prompts)
        rounds = self.expansions if self.expansions is not None else len(seq) - 1
        while len(seq) - 1 < rounds:
            seq.append(seq[-1])
        return seq

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a JSON object, got {type(data).__name__}")
    known = {f.name for f in fields(RunConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    cfg = RunConfig(**data)
    cfg.validate()
    return cfg


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_prompt_library(path: Optional[str]) -> Optional[dict[str, list[float]]]:
    """Prompt library: JSON object mapping prompt id to an embedding vector
    of at least 8 numbers."""
    if path is None:
        return None
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read prompt library {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"prompt library {path!r} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("prompt library root must be a JSON object")
    for key, vec in data.items():
        if not isinstance(vec, list) or len(vec) < 8 or not all(
            isinstance(v, (int, float)) for v in vec
        ):
            raise ConfigError(f"prompt library entry {key!r} must be a list of >= 8 numbers")
    return data


def write_manifest(path: str, manifest: dict[str, Any]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
