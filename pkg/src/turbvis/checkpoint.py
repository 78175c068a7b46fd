"""Binary checkpoint container with bit-exact round trips.

File layout, all integers little-endian:

    magic    4 bytes  b"TVCK"
    u32      format version (currently 1)
    u32      metadata pair count
    u32      tensor entry count
    metadata pairs:   u32 key_len, key utf-8, u32 value_len, value utf-8
    entry table:      u32 name_len, name utf-8, u8 dtype code, u8 ndim,
                      u32 dims[ndim], u64 payload offset, u64 byte length
    payload  raw row-major little-endian tensor data

Offsets are relative to the start of the payload block. Tensors are float32;
the dtype byte leaves room for more. The format is deliberately dumb so any
language can parse it with a couple of struct reads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"TVCK"
VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 0}
_CODE_DTYPES = {0: np.dtype("<f4")}


class CheckpointFormatError(ValueError):
    """Header is not a checkpoint we understand (bad magic / version)."""


class CheckpointIntegrityError(ValueError):
    """Structurally valid header but inconsistent or truncated contents."""


@dataclass
class Checkpoint:
    """Named float32 tensors plus string metadata."""

    version: int = VERSION
    entries: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    def require(self, name: str) -> np.ndarray:
        if name not in self.entries:
            raise CheckpointIntegrityError(f"checkpoint is missing entry {name!r}")
        return self.entries[name]


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    header = bytearray()
    header += MAGIC
    header += struct.pack("<III", ckpt.version, len(ckpt.metadata), len(ckpt.entries))
    for key, value in ckpt.metadata.items():
        kb, vb = key.encode("utf-8"), str(value).encode("utf-8")
        header += struct.pack("<I", len(kb)) + kb
        header += struct.pack("<I", len(vb)) + vb

    payload = bytearray()
    for name, arr in ckpt.entries.items():
        arr = np.asarray(arr, dtype="<f4", order="C")  # keeps 0-d shapes intact
        nb = name.encode("utf-8")
        raw = arr.tobytes()
        header += struct.pack("<I", len(nb)) + nb
        header += struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim)
        header += struct.pack(f"<{arr.ndim}I", *arr.shape)
        header += struct.pack("<QQ", len(payload), len(raw))
        payload += raw

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(bytes(header))
        fh.write(bytes(payload))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    view = memoryview(raw)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointIntegrityError(f"{path}: truncated checkpoint file")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if len(raw) < 16 or bytes(view[:4]) != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint file (bad magic)")
    pos = 4
    version, n_meta, n_entries = struct.unpack("<III", take(12))
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")

    metadata: dict[str, str] = {}
    for _ in range(n_meta):
        (klen,) = struct.unpack("<I", take(4))
        key = bytes(take(klen)).decode("utf-8")
        (vlen,) = struct.unpack("<I", take(4))
        metadata[key] = bytes(take(vlen)).decode("utf-8")

    table = []
    for _ in range(n_entries):
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode("utf-8")
        dtype_code, ndim = struct.unpack("<BB", take(2))
        if dtype_code not in _CODE_DTYPES:
            raise CheckpointFormatError(f"{path}: unknown dtype code {dtype_code}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        offset, nbytes = struct.unpack("<QQ", take(16))
        table.append((name, _CODE_DTYPES[dtype_code], shape, offset, nbytes))

    payload_start = pos
    entries: dict[str, np.ndarray] = {}
    for name, dtype, shape, offset, nbytes in table:
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
        if shape == ():
            expected = dtype.itemsize
        if nbytes != expected:
            raise CheckpointIntegrityError(
                f"{path}: entry {name!r} shape {shape} does not match {nbytes} bytes"
            )
        start = payload_start + offset
        if start + nbytes > len(raw):
            raise CheckpointIntegrityError(f"{path}: entry {name!r} extends past end of file")
        entries[name] = np.frombuffer(raw, dtype=dtype, count=expected // dtype.itemsize,
                                      offset=start).reshape(shape).copy()
    return Checkpoint(version=version, entries=entries, metadata=metadata)
