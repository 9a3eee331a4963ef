"""Flat binary Q/K/V container.

Layout: one ASCII header line `QKV <version> <heads> <S> <d>`, a 4-byte
endianness probe (1.0f written little-endian), then raw little-endian
float32 values, per head in Q, K, V order, each row-major. The probe makes
byte-swapped writers fail loudly instead of loading garbage.
"""

from __future__ import annotations

import struct

import numpy as np

from .core import AttentionHead, HeadSet
from .exceptions import InputError

__all__ = ["MAGIC", "load_tensors", "save_tensors"]

MAGIC = 0x3F800000  # float32 1.0
_MAGIC_SWAPPED = 0x0000803F
_MAX_HEADER = 128


def save_tensors(head_set: HeadSet, path) -> None:
    n, S, d = len(head_set), head_set.S, head_set.d
    with open(path, "wb") as f:
        f.write(f"QKV 1 {n} {S} {d}\n".encode("ascii"))
        f.write(struct.pack("<I", MAGIC))
        for head in head_set:
            for arr in (head.q, head.k, head.v):
                f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_tensors(path) -> HeadSet:
    with open(path, "rb") as f:
        raw = f.read()
    nl = raw.find(b"\n", 0, _MAX_HEADER)
    if nl < 0:
        raise InputError(f"{path}: no header line within {_MAX_HEADER} bytes")
    fields = raw[:nl].decode("ascii", errors="replace").split()
    if len(fields) != 5 or fields[0] != "QKV":
        raise InputError(f"{path}: malformed header {raw[:nl]!r}")
    if fields[1] != "1":
        raise InputError(f"{path}: unsupported version {fields[1]!r}")
    try:
        n, S, d = (int(x) for x in fields[2:])
    except ValueError as e:
        raise InputError(f"{path}: malformed header {raw[:nl]!r}") from e
    if n < 1 or S < 1 or d < 1:
        raise InputError(f"{path}: header counts must be positive, got {n}, {S}, {d}")
    body = nl + 1
    if len(raw) < body + 4:
        raise InputError(f"{path}: truncated before the magic value at byte {body}")
    (magic,) = struct.unpack("<I", raw[body : body + 4])
    if magic != MAGIC:
        if magic == _MAGIC_SWAPPED:
            raise InputError(
                f"{path}: magic value is byte-swapped; file was written big-endian"
            )
        raise InputError(f"{path}: bad magic value 0x{magic:08X} at byte {body}")
    payload = body + 4
    expected = n * 3 * S * d * 4
    got = len(raw) - payload
    if got != expected:
        raise InputError(
            f"{path}: payload at byte {payload} holds {got} bytes, expected {expected}"
        )
    values = np.frombuffer(raw, dtype="<f4", offset=payload)
    finite = np.isfinite(values)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise InputError(
            f"{path}: non-finite value at byte {payload + 4 * bad} (element {bad})"
        )
    cube = values.astype(np.float64).reshape(n, 3, S, d)
    heads = tuple(
        AttentionHead(cube[i, 0], cube[i, 1], cube[i, 2], head_id=i) for i in range(n)
    )
    return HeadSet(heads)
