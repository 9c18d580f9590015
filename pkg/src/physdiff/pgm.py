"""8-bit binary PGM output for field inspection."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def to_uint8(field: np.ndarray) -> np.ndarray:
    """Min-max scale a 2-D field to 0..255; a constant field maps to 0."""
    f = np.asarray(field, dtype=float)
    if f.ndim != 2:
        raise ValueError(f"PGM needs a 2-D field, got shape {f.shape}")
    lo, hi = float(f.min()), float(f.max())
    if hi <= lo:
        return np.zeros(f.shape, dtype=np.uint8)
    return np.round((f - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(path, field: np.ndarray) -> Path:
    img = to_uint8(field)
    h, w = img.shape
    path = Path(path)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = _HEADER.match(raw)
    if m is None:
        raise ValueError("not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError("only 8-bit PGM is supported")
    return np.frombuffer(raw[m.end():m.end() + w * h], dtype=np.uint8).reshape(h, w)


def write_fields(directory, samples: np.ndarray, limit: int = 8, prefix: str = "sample") -> list[Path]:
    """One PGM per channel for the first ``limit`` samples of shape (N, C, H, W)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = []
    for i, x in enumerate(np.asarray(samples)[:limit]):
        for c, ch in enumerate(x):
            out.append(write_pgm(d / f"{prefix}_{i:03d}_ch{c}.pgm", ch))
    return out
