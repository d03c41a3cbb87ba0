"""Wire framing: u32 little-endian header length, UTF-8 JSON header, payload.

The payload length is implied by the header: "predict" and "epsilon"
messages carry exactly 4*n*c*h*w bytes of little-endian float32; every
other op carries none. Headers over 1 MiB and payloads over 256 MiB are
rejected as malformed.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO, Optional

from .errors import MessageError

MAX_HEADER = 1 << 20
MAX_PAYLOAD = 256 << 20
PROTOCOL_VERSION = 1


def payload_length(header: dict) -> int:
    """Bytes implied by a decoded header; raises MessageError on a bad shape."""
    if header.get("op") not in ("predict", "epsilon"):
        return 0
    shape = header.get("shape")
    if (
        not isinstance(shape, list)
        or len(shape) != 4
        or not all(isinstance(d, int) and not isinstance(d, bool) and d >= 1 for d in shape)
    ):
        raise MessageError(f"op {header.get('op')!r} carries bad shape {shape!r}")
    n = 4 * shape[0] * shape[1] * shape[2] * shape[3]
    if n > MAX_PAYLOAD:
        raise MessageError(f"payload of {n} bytes exceeds the {MAX_PAYLOAD} byte cap")
    return n


def _read_exact(stream: BinaryIO, n: int, what: str) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = stream.read(remaining)
        if not chunk:
            raise MessageError(f"stream closed with {remaining} bytes of {what} pending")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_message(stream: BinaryIO) -> Optional[tuple[dict, bytes]]:
    """One (header, payload) frame, or None on a clean end of stream.

    End of stream is clean only at a frame boundary; anywhere else it is a
    MessageError, as is any undecodable or oversized header.
    """
    prefix = stream.read(4)
    if not prefix:
        return None
    if len(prefix) < 4:
        prefix += stream.read(4 - len(prefix)) or b""
    if len(prefix) < 4:
        raise MessageError("stream closed inside a header length prefix")
    (header_len,) = struct.unpack("<I", prefix)
    if not 0 < header_len <= MAX_HEADER:
        raise MessageError(f"unreasonable header length {header_len}")
    raw = _read_exact(stream, header_len, "header")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MessageError(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict) or "op" not in header:
        raise MessageError(f"header missing op: {header!r}")
    payload = _read_exact(stream, payload_length(header), "payload")
    return header, payload


def write_message(stream: BinaryIO, header: dict, payload: bytes = b"") -> None:
    raw = json.dumps(header, separators=(",", ":")).encode("utf-8")
    stream.write(struct.pack("<I", len(raw)) + raw + payload)
    stream.flush()
