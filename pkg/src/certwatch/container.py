"""Little-endian binary container for named float32 tensors.

Layout::

    b"VCD1"                     magic
    u32 version                 currently 1
    u32 n, n bytes              JSON metadata (detector config, attack info, ...)
    u32 layer count
    per layer:
        u32 name length, name bytes (utf-8)
        u32 rank, rank x u32 dims
        prod(dims) x f32        raw values, row-major

Used for detector weights and for universal perturbations.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VCD1"
VERSION = 1


class ContainerError(ValueError):
    """Base class for unreadable container files."""


class BadMagicError(ContainerError):
    pass


class UnsupportedVersionError(ContainerError):
    pass


class TruncatedFileError(ContainerError):
    pass


def write_container(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(meta_bytes)), meta_bytes]
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.array(arr, dtype="<f4", order="C")  # ascontiguousarray would promote 0-d to 1-d
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)) + raw_name)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(
                f"{self.path}: truncated file (needed {n} bytes at offset {self.pos}, have {len(self.buf) - self.pos})"
            )
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    r = _Reader(buf, path)
    if r.take(4) != MAGIC:
        raise BadMagicError(f"{path}: bad magic (expected {MAGIC!r})")
    version = r.u32()
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version} (this reader handles {VERSION})")
    try:
        meta = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: corrupt metadata block ({exc})") from None
    tensors: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(buf):
        raise ContainerError(f"{path}: {len(buf) - r.pos} trailing bytes after last tensor")
    return meta, tensors
