"""Noise-predictor boundary: the analytic in-process implementation and a
wire-protocol client for external model processes.

Wire protocol (bit-exact, little-endian):
  message   = u32 header length, UTF-8 JSON header, raw payload
  handshake = {"op": "hello", "protocol": 1, "shape": [n, c, h, w]}
              sent by the client first, answered by the server
  request   = {"op": "predict", "t": int, "step_index": int, "prompt": str,
               "cfg_scale": number, "shape": [n, c, h, w]} + f32le latent
  response  = {"op": "epsilon", "shape": [n, c, h, w]} + f32le noise
              or {"op": "error", "message": str} with empty payload
Payloads carry exactly n*c*h*w little-endian float32 values in frame-major
order. One request is in flight at a time.
"""

from __future__ import annotations

import json
import os
import select
import shlex
import socket
import struct
import subprocess
import time
from abc import ABC, abstractmethod
from typing import Optional, Sequence

import numpy as np

from .errors import BridgeError, InvalidArgumentError, ProtocolError
from .latent import Dims, LatentClip
from .schedule import NoiseSchedule, StepRef
from .world import (
    SIGMA0_DEFAULT,
    SIGMA_UNCOND,
    PromptSpec,
    SceneSpec,
    analytic_eps,
    cfg_combine,
    null_scene,
    prompt_to_scene,
)

PROTOCOL_VERSION = 1
HANDSHAKE_TIMEOUT = 30.0
_MAX_HEADER = 1 << 20


class NoisePredictor(ABC):
    """Predicts the noise component of a latent at a given timestep."""

    @property
    @abstractmethod
    def dims(self) -> Dims:
        """Latent dims this predictor accepts."""

    @abstractmethod
    def predict_eps(
        self, z_t: LatentClip, prompt: PromptSpec, step: StepRef, cfg_scale: float
    ) -> LatentClip:
        """Raw prediction; use the module-level predict() for validation."""


def predict(
    p: NoisePredictor,
    z_t: LatentClip,
    prompt: PromptSpec,
    step: StepRef,
    cfg_scale: float,
) -> LatentClip:
    """Validated prediction: checks dims against the predictor capability
    and the response, never mutates z_t."""
    if z_t.dims != p.dims:
        raise InvalidArgumentError(f"latent dims {z_t.dims} do not match predictor dims {p.dims}")
    eps = p.predict_eps(z_t, prompt, step, cfg_scale)
    if eps.dims != z_t.dims:
        raise ProtocolError(f"predictor returned dims {eps.dims}, expected {z_t.dims}")
    return eps


class AnalyticPredictor(NoisePredictor):
    """Closed-form Bayes-optimal predictor for the toy Gaussian world,
    CFG-combined against the unconditional (zero-mean, broad) scene."""

    def __init__(
        self,
        schedule: NoiseSchedule,
        dims: Sequence[int],
        sigma0: float = SIGMA0_DEFAULT,
        sigma_uncond: float = SIGMA_UNCOND,
    ) -> None:
        dims = tuple(int(d) for d in dims)
        if len(dims) != 4 or min(dims) < 1:
            raise InvalidArgumentError(f"dims must be 4 positive ints, got {dims!r}")
        self._schedule = schedule
        self._dims: Dims = dims  # type: ignore[assignment]
        self._sigma0 = float(sigma0)
        self._null = null_scene(dims, dims[0], sigma_uncond)
        self._scenes: dict[tuple[str, bytes], SceneSpec] = {}

    @property
    def dims(self) -> Dims:
        return self._dims

    def scene_for(self, prompt: PromptSpec) -> SceneSpec:
        key = (prompt.id, prompt.embedding.tobytes())
        scene = self._scenes.get(key)
        if scene is None:
            scene = prompt_to_scene(prompt, self._dims, self._dims[0], self._sigma0)
            self._scenes[key] = scene
        return scene

    def predict_eps(
        self, z_t: LatentClip, prompt: PromptSpec, step: StepRef, cfg_scale: float
    ) -> LatentClip:
        eps_c = analytic_eps(self.scene_for(prompt), z_t, step.timestep, self._schedule)
        if cfg_scale == 1.0:
            return eps_c
        eps_u = analytic_eps(self._null, z_t, step.timestep, self._schedule)
        return cfg_combine(eps_u, eps_c, cfg_scale)


# ---------------------------------------------------------------------------
# Bridge transports
# ---------------------------------------------------------------------------


class _StdioTransport:
    """Child process wired through stdin/stdout pipes."""

    def __init__(self, command: str) -> None:
        argv = shlex.split(command)
        if not argv:
            raise InvalidArgumentError("empty bridge command")
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
            )
        except OSError as exc:
            raise BridgeError(f"failed to start bridge {argv[0]!r}: {exc}") from exc
        self._fd = self._proc.stdout.fileno()

    def write(self, data: bytes) -> None:
        try:
            self._proc.stdin.write(data)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BridgeError(f"bridge process closed its input: {exc}") from exc

    def read_exact(self, n: int, deadline: Optional[float]) -> bytes:
        chunks = []
        remaining = n
        while remaining > 0:
            if deadline is not None:
                budget = deadline - time.monotonic()
                if budget <= 0:
                    raise BridgeError(f"bridge read timed out with {remaining} bytes pending")
                ready, _, _ = select.select([self._fd], [], [], budget)
                if not ready:
                    raise BridgeError(f"bridge read timed out with {remaining} bytes pending")
            chunk = os.read(self._fd, remaining)
            if not chunk:
                raise BridgeError(f"bridge closed the stream with {remaining} bytes pending")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        try:
            if self._proc.stdin and not self._proc.stdin.closed:
                self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=5.0)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()


class _TcpTransport:
    """Socket to an already-running server."""

    def __init__(self, host: str, port: int) -> None:
        try:
            self._sock = socket.create_connection((host, port), timeout=HANDSHAKE_TIMEOUT)
        except OSError as exc:
            raise BridgeError(f"failed to connect to {host}:{port}: {exc}") from exc

    def write(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise BridgeError(f"bridge socket write failed: {exc}") from exc

    def read_exact(self, n: int, deadline: Optional[float]) -> bytes:
        chunks = []
        remaining = n
        while remaining > 0:
            if deadline is not None:
                budget = deadline - time.monotonic()
                if budget <= 0:
                    raise BridgeError(f"bridge read timed out with {remaining} bytes pending")
                self._sock.settimeout(budget)
            else:
                self._sock.settimeout(None)
            try:
                chunk = self._sock.recv(remaining)
            except socket.timeout as exc:
                raise BridgeError(f"bridge read timed out with {remaining} bytes pending") from exc
            except OSError as exc:
                raise BridgeError(f"bridge socket read failed: {exc}") from exc
            if not chunk:
                raise BridgeError(f"bridge closed the stream with {remaining} bytes pending")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


def _payload_bytes(header: dict) -> int:
    op = header.get("op")
    if op in ("predict", "epsilon"):
        shape = header.get("shape")
        if (
            not isinstance(shape, list)
            or len(shape) != 4
            or not all(isinstance(d, int) and d >= 1 for d in shape)
        ):
            raise ProtocolError(f"message op={op!r} carries bad shape {shape!r}")
        return 4 * shape[0] * shape[1] * shape[2] * shape[3]
    return 0


def send_message(transport, header: dict, payload: bytes = b"") -> None:
    raw = json.dumps(header, separators=(",", ":")).encode("utf-8")
    transport.write(struct.pack("<I", len(raw)) + raw + payload)


def recv_message(transport, deadline: Optional[float] = None) -> tuple[dict, bytes]:
    (header_len,) = struct.unpack("<I", transport.read_exact(4, deadline))
    if not 0 < header_len <= _MAX_HEADER:
        raise ProtocolError(f"unreasonable header length {header_len}")
    raw = transport.read_exact(header_len, deadline)
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict) or "op" not in header:
        raise ProtocolError(f"header missing op: {header!r}")
    payload = transport.read_exact(_payload_bytes(header), deadline)
    return header, payload


class BridgeSession(NoisePredictor):
    """Synchronous client session over a bridge transport.

    One request in flight at a time; the handshake must complete before the
    first predict. Use open_bridge()/close_bridge() or a with-block.
    """

    def __init__(self, transport, dims: Dims, timeout: Optional[float]) -> None:
        self._transport = transport
        self._dims = dims
        self._timeout = timeout
        self._closed = False

    @property
    def dims(self) -> Dims:
        return self._dims

    def predict_eps(
        self, z_t: LatentClip, prompt: PromptSpec, step: StepRef, cfg_scale: float
    ) -> LatentClip:
        if self._closed:
            raise BridgeError("bridge session is closed")
        header = {
            "op": "predict",
            "t": step.timestep,
            "step_index": step.step_index,
            "prompt": prompt.id,
            "cfg_scale": float(cfg_scale),
            "shape": list(z_t.dims),
        }
        payload = np.ascontiguousarray(z_t.data, dtype="<f4").tobytes()
        send_message(self._transport, header, payload)
        deadline = None if self._timeout is None else time.monotonic() + self._timeout
        resp, body = recv_message(self._transport, deadline)
        if resp.get("op") == "error":
            raise BridgeError(f"bridge reported: {resp.get('message', '(no message)')}")
        if resp.get("op") != "epsilon":
            raise ProtocolError(f"expected epsilon response, got {resp.get('op')!r}")
        if tuple(resp["shape"]) != z_t.dims:
            raise ProtocolError(f"response shape {resp['shape']} does not match request {z_t.dims}")
        arr = np.frombuffer(body, dtype="<f4").reshape(z_t.dims)
        return LatentClip(arr)

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._transport.close()

    def __enter__(self) -> "BridgeSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_bridge(
    target: str,
    dims: Sequence[int],
    timeout: Optional[float] = HANDSHAKE_TIMEOUT,
) -> BridgeSession:
    """Start a bridge session.

    target is either "tcp:HOST:PORT" for an already-listening server or a
    shell-style command line to spawn over stdio. The client sends its hello
    first and expects a hello back with the same protocol version and shape.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4 or min(dims) < 1:
        raise InvalidArgumentError(f"dims must be 4 positive ints, got {dims!r}")
    if target.startswith("tcp:"):
        parts = target.split(":")
        if len(parts) != 3:
            raise InvalidArgumentError(f"tcp target must be tcp:HOST:PORT, got {target!r}")
        transport = _TcpTransport(parts[1], int(parts[2]))
    else:
        transport = _StdioTransport(target)
    try:
        send_message(transport, {"op": "hello", "protocol": PROTOCOL_VERSION, "shape": list(dims)})
        deadline = None if timeout is None else time.monotonic() + timeout
        header, _ = recv_message(transport, deadline)
        if header.get("op") != "hello":
            raise ProtocolError(f"expected hello, got {header.get('op')!r}")
        if header.get("protocol") != PROTOCOL_VERSION:
            raise ProtocolError(
                f"protocol version mismatch: ours {PROTOCOL_VERSION}, theirs {header.get('protocol')}"
            )
        if tuple(header.get("shape", ())) != dims:
            raise ProtocolError(f"shape mismatch: ours {dims}, theirs {header.get('shape')}")
    except BaseException:
        transport.close()
        raise
    return BridgeSession(transport, dims, timeout)


def close_bridge(session: BridgeSession) -> None:
    session.close()
