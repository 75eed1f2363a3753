"""SBDT tensor container: a flat little-endian binary format.

Layout:
  magic "SBDT" (4 bytes) | u32 version=1 | u32 tensor count
  per tensor: u16 name length | name UTF-8 | u32 ndim | ndim x u64 dims
              | row-major float64 payload
  trailer:   u64 manifest length | manifest UTF-8

Payload round-trips are bit exact. Loaders fail with a typed error naming
the byte offset of the problem.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SBDT"
VERSION = 1


class SBDTError(Exception):
    """Base class for container format errors; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class BadMagicError(SBDTError):
    pass


class VersionMismatchError(SBDTError):
    pass


class TruncatedFileError(SBDTError):
    pass


def save_tensors(path, tensors: dict[str, np.ndarray], manifest: str = "") -> None:
    """Write named float64 tensors plus a trailing manifest string."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
        name_bytes = name.encode("utf-8")
        if len(name_bytes) > 0xFFFF:
            raise ValueError(f"tensor name too long: {len(name_bytes)} bytes")
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.astype("<f8").tobytes())
    manifest_bytes = manifest.encode("utf-8")
    chunks.append(struct.pack("<Q", len(manifest_bytes)))
    chunks.append(manifest_bytes)
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedFileError(f"file ends inside {what}", self.pos)
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]


def load_tensors(path) -> tuple[dict[str, np.ndarray], str]:
    """Read a container back; returns (tensors, manifest)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    version = r.u32("version")
    if version != VERSION:
        raise VersionMismatchError(f"unsupported version {version}", 4)
    count = r.u32("tensor count")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = r.u16("name length")
        name = r.take(name_len, "tensor name").decode("utf-8")
        ndim = r.u32("ndim")
        dims = [r.u64("dims") for _ in range(ndim)]
        n_items = 1
        for d in dims:
            n_items *= d
        payload = r.take(8 * n_items, f"payload of {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    manifest_len = r.u64("manifest length")
    manifest = r.take(manifest_len, "manifest").decode("utf-8")
    return tensors, manifest
