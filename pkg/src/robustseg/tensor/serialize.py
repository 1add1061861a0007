"""RSTN tensor container.

Layout (little-endian): magic ``b"RSTN"``, version u32, entry count u32, then
per entry: name length u16, UTF-8 name, dtype code u8 (0 = f32), rank u8,
extents as u32, payload as f32 row-major.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import RecordIOError

MAGIC = b"RSTN"
VERSION = 1
DTYPE_F32 = 0


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4", order="C")  # ascontiguousarray would promote 0-d to 1-d
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise ValueError(f"entry {name!r} cannot be encoded")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", DTYPE_F32, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def loads(blob: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise RecordIOError(source, "not an RSTN container")
    try:
        version, count = struct.unpack_from("<II", view, 4)
        if version != VERSION:
            raise RecordIOError(source, f"unsupported RSTN version {version}")
        pos = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos:pos + nlen]).decode("utf-8")
            pos += nlen
            code, rank = struct.unpack_from("<BB", view, pos)
            pos += 2
            if code != DTYPE_F32:
                raise RecordIOError(source, f"unknown dtype code {code} for {name!r}")
            shape = struct.unpack_from(f"<{rank}I", view, pos)
            pos += 4 * rank
            nbytes = 4 * int(np.prod(shape, dtype=np.int64))
            if pos + nbytes > len(view):
                raise RecordIOError(source, f"truncated payload for {name!r}")
            out[name] = np.frombuffer(view[pos:pos + nbytes], dtype="<f4").reshape(shape).astype(np.float32)
            pos += nbytes
    except struct.error as exc:
        raise RecordIOError(source, f"corrupt RSTN container ({exc})") from exc
    return out


def save(path, tensors: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(dumps(tensors))
    except OSError as exc:
        raise RecordIOError(path, str(exc)) from exc


def load(path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise RecordIOError(path, str(exc)) from exc
    return loads(blob, str(path))
