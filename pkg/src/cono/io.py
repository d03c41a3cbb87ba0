"""Frame export and latent-file inspection."""

from __future__ import annotations

import json
import os
from typing import Any

import numpy as np

from .errors import InvalidArgumentError
from .latent import LAT_MAGIC, LatentClip, read_lat, write_lat
from .world import Codec, decode


def export_frames(clip: LatentClip, out_dir: str, codec: Codec) -> list[str]:
    """Write one binary PGM (P5, maxval 255) per frame per channel, plus the
    raw ".lat" dump.

    Pixel values map linearly from the global (min, max) of the decoded clip
    to [0, 255]; the pair is recorded in scale.json so images stay
    comparable. A constant clip (degenerate range) maps to uniform 128.
    Returns the created file paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    pixels = decode(codec, clip)
    data = pixels.data
    lo = float(data.min())
    hi = float(data.max())
    n, c, h, w = pixels.dims
    width = max(3, len(str(n - 1)))
    created: list[str] = []
    if hi > lo:
        scaled = np.clip(np.rint((data.astype(np.float64) - lo) / (hi - lo) * 255.0), 0, 255)
        bytes_all = scaled.astype(np.uint8)
    else:
        bytes_all = np.full(pixels.dims, 128, np.uint8)
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    for f in range(n):
        for ch in range(c):
            path = os.path.join(out_dir, f"frame_{f:0{width}d}_ch{ch}.pgm")
            try:
                with open(path, "wb") as fh:
                    fh.write(header)
                    fh.write(bytes_all[f, ch].tobytes())
            except OSError as exc:
                raise InvalidArgumentError(f"cannot write {path!r}: {exc}") from exc
            created.append(path)
    scale_path = os.path.join(out_dir, "scale.json")
    with open(scale_path, "w", encoding="utf-8") as fh:
        json.dump({"min": lo, "max": hi}, fh)
        fh.write("\n")
    created.append(scale_path)
    lat_path = os.path.join(out_dir, "video.lat")
    write_lat(clip, lat_path)
    created.append(lat_path)
    return created


def lat_summary(path: str) -> dict[str, Any]:
    """Header and basic statistics of a ".lat" file, for inspection."""
    clip = read_lat(path)
    data = clip.data.astype(np.float64)
    return {
        "path": path,
        "magic": LAT_MAGIC.decode("ascii"),
        "dims": list(clip.dims),
        "dtype": "f32le",
        "frames": clip.n_frames,
        "min": float(data.min()),
        "max": float(data.max()),
        "mean": float(data.mean()),
        "std": float(data.std()),
    }
