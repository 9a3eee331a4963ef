"""8-bit grayscale PGM export for probability matrices and block masks.

Probability matrices are max-pooled first, then log-scaled so the orders
of magnitude softmax produces stay visible; zeros map to black. Masks are
rendered binary at block granularity, so a downsample factor of 1 round
trips exactly.
"""

from __future__ import annotations

import numpy as np

from .exceptions import InputError
from .filtering import BlockMask

__all__ = ["export_heatmap", "read_pgm"]


def _max_pool(a: np.ndarray, f: int) -> np.ndarray:
    if f == 1:
        return a
    h, w = a.shape
    ph, pw = -(-h // f), -(-w // f)
    padded = np.zeros((ph * f, pw * f), dtype=a.dtype)
    padded[:h, :w] = a
    return padded.reshape(ph, f, pw, f).max(axis=(1, 3))


def _log_gray(a: np.ndarray) -> np.ndarray:
    """Map nonnegative values to 0..255: zero stays 0, positives spread
    over 1..255 by log magnitude."""
    gray = np.zeros(a.shape, dtype=np.uint8)
    pos = a > 0
    if not pos.any():
        return gray
    logs = np.log10(a[pos])
    lo, hi = logs.min(), logs.max()
    if hi == lo:
        gray[pos] = 255
    else:
        gray[pos] = (1 + np.round(254 * (logs - lo) / (hi - lo))).astype(np.uint8)
    return gray


def export_heatmap(data, path, downsample: int = 1) -> None:
    """Write a matrix or block mask to `path` as a binary (P5) PGM."""
    if downsample < 1:
        raise InputError(f"downsample must be >= 1, got {downsample}")
    if isinstance(data, BlockMask):
        pooled = _max_pool(data.active.astype(np.uint8), downsample)
        gray = np.where(pooled > 0, 255, 0).astype(np.uint8)
    else:
        a = np.asarray(data, dtype=np.float64)
        if a.ndim != 2:
            raise InputError(f"heatmap input must be 2-D, got shape {a.shape}")
        if (a < 0).any():
            raise InputError("heatmap input must be nonnegative")
        gray = _log_gray(_max_pool(a, downsample))
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read back a binary PGM written by export_heatmap (no comment support)."""
    with open(path, "rb") as f:
        raw = f.read()
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5":
        raise InputError(f"{path}: not a binary PGM")
    try:
        w, h = (int(x) for x in parts[1].split())
        maxval = int(parts[2])
    except ValueError as e:
        raise InputError(f"{path}: malformed PGM header") from e
    if maxval != 255:
        raise InputError(f"{path}: expected maxval 255, got {maxval}")
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=w * h)
    if pixels.size != w * h:
        raise InputError(f"{path}: truncated pixel payload")
    return pixels.reshape(h, w).copy()
