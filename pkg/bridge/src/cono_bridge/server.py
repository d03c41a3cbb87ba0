"""Single-session serving loop.

The first message must be a hello carrying the protocol version and the
latent shape; the server answers with its own hello and then handles one
predict at a time. A model failure produces an error response and the
session continues; a malformed frame produces an error response and the
session closes; EOF at a frame boundary is a clean exit.
"""

from __future__ import annotations

import logging
from typing import BinaryIO

import numpy as np

from .adapter import AdapterConfig
from .errors import MessageError, ModelError
from .protocol import PROTOCOL_VERSION, read_message, write_message

log = logging.getLogger("cono_bridge")


def _send_error(rout: BinaryIO, message: str) -> None:
    try:
        write_message(rout, {"op": "error", "message": message})
    except OSError:
        log.error("client vanished while reporting: %s", message)


def _check_predict(header: dict, shape: tuple[int, ...]) -> tuple[str, int, int, float]:
    """Validate predict header fields against the session contract."""
    got = header.get("shape")
    if list(got) != list(shape):
        raise MessageError(f"predict shape {got} does not match session shape {list(shape)}")
    prompt = header.get("prompt")
    if not isinstance(prompt, str):
        raise MessageError(f"prompt must be a string, got {type(prompt).__name__}")
    t = header.get("t")
    step_index = header.get("step_index", 0)
    if not isinstance(t, int) or isinstance(t, bool):
        raise MessageError(f"t must be an integer, got {t!r}")
    if not isinstance(step_index, int) or isinstance(step_index, bool):
        raise MessageError(f"step_index must be an integer, got {step_index!r}")
    cfg_scale = header.get("cfg_scale", 1.0)
    if isinstance(cfg_scale, bool) or not isinstance(cfg_scale, (int, float)):
        raise MessageError(f"cfg_scale must be a number, got {cfg_scale!r}")
    return prompt, t, step_index, float(cfg_scale)


def _handshake(config: AdapterConfig, rin: BinaryIO, rout: BinaryIO) -> bool:
    """Run the hello exchange. Returns True when the session may proceed."""
    msg = read_message(rin)
    if msg is None:
        log.info("client closed before the handshake")
        return False
    header, _ = msg
    if header.get("op") != "hello":
        raise MessageError(f"handshake must begin with hello, got op {header.get('op')!r}")
    if header.get("protocol") != PROTOCOL_VERSION:
        raise MessageError(
            f"unsupported protocol {header.get('protocol')!r}, this server speaks "
            f"{PROTOCOL_VERSION}"
        )
    got = header.get("shape")
    if list(got) != list(config.shape):
        raise MessageError(
            f"client shape {got} does not match served shape {list(config.shape)}"
        )
    write_message(rout, {"op": "hello", "protocol": PROTOCOL_VERSION, "shape": list(config.shape)})
    return True


def serve(config: AdapterConfig, model, rin: BinaryIO, rout: BinaryIO) -> int:
    """Serve one session over a byte-stream pair. Returns the process exit
    status: 0 for a clean end of stream, 1 after a protocol violation."""
    n_elem = int(np.prod(config.shape))
    try:
        if not _handshake(config, rin, rout):
            return 0
    except MessageError as exc:
        log.error("handshake failed: %s", exc)
        _send_error(rout, str(exc))
        return 1

    served = 0
    while True:
        try:
            msg = read_message(rin)
        except MessageError as exc:
            log.error("closing session: %s", exc)
            _send_error(rout, str(exc))
            return 1
        if msg is None:
            log.info("end of stream after %d predictions", served)
            return 0
        header, payload = msg
        op = header.get("op")
        if op != "predict":
            _send_error(rout, f"unexpected op {op!r} after handshake")
            return 1
        try:
            prompt, t, step_index, cfg_scale = _check_predict(header, config.shape)
        except MessageError as exc:
            log.error("closing session: %s", exc)
            _send_error(rout, str(exc))
            return 1
        z = np.frombuffer(payload, dtype="<f4").reshape(config.shape)
        try:
            eps = model.predict(prompt, t, step_index, cfg_scale, z)
        except ModelError as exc:
            log.warning("model failure, session continues: %s", exc)
            _send_error(rout, str(exc))
            continue
        eps = np.ascontiguousarray(eps, dtype="<f4")
        if eps.size != n_elem:
            _send_error(rout, f"model produced {eps.size} values, expected {n_elem}")
            return 1
        write_message(
            rout, {"op": "epsilon", "shape": list(config.shape)}, eps.tobytes()
        )
        served += 1
