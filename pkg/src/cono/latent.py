"""Value-semantic latent video tensors and frame-axis primitives.

A latent clip is a (frames, channels, height, width) float32 array in
frame-major memory order. Clips are immutable: construction copies the input
and marks the buffer read-only, so every operation returns a fresh clip and
no caller can mutate state shared with the sampler.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .errors import InvalidArgumentError, ProtocolError

Dims = tuple[int, int, int, int]


@dataclass(frozen=True, eq=False)
class LatentClip:
    """Immutable (frames, channels, height, width) float32 tensor."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=np.float32, order="C", copy=True)
        if arr.ndim != 4:
            raise InvalidArgumentError(
                f"latent data must have 4 dims (frames, channels, height, width), got {arr.ndim}"
            )
        if min(arr.shape) < 1:
            raise InvalidArgumentError(f"all latent dims must be >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise InvalidArgumentError("latent data contains NaN or infinity")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> Dims:
        return self.data.shape  # type: ignore[return-value]

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def frame_size(self) -> int:
        c, h, w = self.data.shape[1:]
        return c * h * w

    def frame(self, i: int) -> np.ndarray:
        """Read-only view of one (channels, height, width) frame."""
        if not 0 <= i < self.n_frames:
            raise InvalidArgumentError(f"frame index {i} out of range [0, {self.n_frames})")
        return self.data[i]

    def as_2d(self) -> np.ndarray:
        """Read-only (frames, frame_size) view for the reduction kernels."""
        return self.data.reshape(self.n_frames, self.frame_size)


@dataclass(frozen=True)
class FrameRange:
    """Half-open [start, end) range of frame indices."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if not (0 <= self.start <= self.end):
            raise InvalidArgumentError(f"need 0 <= start <= end, got [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    def check_within(self, n_frames: int) -> None:
        if self.end > n_frames:
            raise InvalidArgumentError(
                f"range [{self.start}, {self.end}) exceeds clip of {n_frames} frames"
            )


class SeededRng:
    """Deterministic random source keyed by a 64-bit seed.

    Wraps numpy's PCG64 generator. The same seed always yields the same
    sample stream within one installed copy of this package; streams are not
    guaranteed stable across numpy major versions or other languages.
    """

    def __init__(self, seed: int) -> None:
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise InvalidArgumentError(f"seed must be in [0, 2**64), got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    @property
    def generator(self) -> np.random.Generator:
        """Underlying generator, for consumers needing other distributions."""
        return self._gen

    def standard_normal(self, shape: Sequence[int]) -> np.ndarray:
        return self._gen.standard_normal(size=tuple(shape), dtype=np.float32)

    def integers(self, low: int, high: int) -> int:
        return int(self._gen.integers(low, high))


def sample_standard_normal(rng: SeededRng, dims: Dims) -> LatentClip:
    """Draw an i.i.d. standard-normal clip of the given dims."""
    if len(dims) != 4 or min(dims) < 1:
        raise InvalidArgumentError(f"dims must be 4 positive ints, got {dims!r}")
    return LatentClip(rng.standard_normal(dims))


def slice_frames(clip: LatentClip, frange: FrameRange) -> LatentClip:
    """Copy of the frames in [start, end); the range must be non-empty."""
    frange.check_within(clip.n_frames)
    if len(frange) == 0:
        raise InvalidArgumentError("cannot slice an empty frame range")
    return LatentClip(clip.data[frange.start:frange.end])


def concat_frames(parts: Iterable[LatentClip]) -> LatentClip:
    """Concatenate clips along the frame axis; per-frame dims must match."""
    parts = list(parts)
    if not parts:
        raise InvalidArgumentError("need at least one clip to concatenate")
    shape = parts[0].data.shape[1:]
    for p in parts[1:]:
        if p.data.shape[1:] != shape:
            raise InvalidArgumentError(
                f"frame dims mismatch: {p.data.shape[1:]} vs {shape}"
            )
    return LatentClip(np.concatenate([p.data for p in parts], axis=0))


def flip_frames(clip: LatentClip, frange: FrameRange) -> LatentClip:
    """Reverse the order of the frames inside [start, end), in place of
    their positions; frames outside the range are untouched."""
    frange.check_within(clip.n_frames)
    out = clip.data.copy()
    out[frange.start:frange.end] = out[frange.start:frange.end][::-1]
    return LatentClip(out)


def frame_mean(clip: LatentClip) -> LatentClip:
    """Mean over the frame axis as a single-frame clip."""
    flat = K.frame_mean(clip.as_2d())
    return LatentClip(flat.reshape((1,) + clip.data.shape[1:]))


def mse(a: LatentClip, b: LatentClip) -> float:
    """Mean squared difference over all elements; dims must match."""
    if a.dims != b.dims:
        raise InvalidArgumentError(f"dims mismatch: {a.dims} vs {b.dims}")
    return K.mse(a.data, b.data)


# ---------------------------------------------------------------------------
# .lat container: magic, little-endian u32 header length, JSON header,
# raw frame-major f32le payload.
# ---------------------------------------------------------------------------

LAT_MAGIC = b"CONOLAT1"
_MAX_HEADER = 1 << 20


def write_lat(clip: LatentClip, path: str) -> None:
    header = json.dumps({"dims": list(clip.dims), "dtype": "f32le"}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(LAT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(clip.data, dtype="<f4").tobytes())


def read_lat(path: str) -> LatentClip:
    with open(path, "rb") as fh:
        magic = fh.read(len(LAT_MAGIC))
        if magic != LAT_MAGIC:
            raise ProtocolError(f"bad magic in {path!r}: {magic!r}")
        raw_len = fh.read(4)
        if len(raw_len) != 4:
            raise ProtocolError(f"truncated header length in {path!r}")
        (header_len,) = struct.unpack("<I", raw_len)
        if not 0 < header_len <= _MAX_HEADER:
            raise ProtocolError(f"unreasonable header length {header_len} in {path!r}")
        raw_header = fh.read(header_len)
        if len(raw_header) != header_len:
            raise ProtocolError(f"truncated header in {path!r}")
        try:
            header = json.loads(raw_header.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"header is not valid JSON in {path!r}: {exc}") from exc
        dims = header.get("dims")
        if (
            not isinstance(dims, list)
            or len(dims) != 4
            or not all(isinstance(d, int) and d >= 1 for d in dims)
        ):
            raise ProtocolError(f"bad dims {dims!r} in {path!r}")
        if header.get("dtype") != "f32le":
            raise ProtocolError(f"unsupported dtype {header.get('dtype')!r} in {path!r}")
        n_bytes = 4 * int(np.prod(dims))
        payload = fh.read(n_bytes + 1)
        if len(payload) != n_bytes:
            raise ProtocolError(
                f"payload size mismatch in {path!r}: expected {n_bytes} bytes, got {len(payload)}"
            )
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
        return LatentClip(arr)
