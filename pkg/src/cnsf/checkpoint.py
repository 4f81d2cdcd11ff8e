"""Binary checkpoint format.

Layout, all integers little-endian::

    b"CNSF"  u32 version  u32 tensor_count
    per tensor: u32 name_len, name (UTF-8), u8 dtype, u8 rank, u32 dims[rank], raw data
    u32 meta_len, meta (UTF-8 JSON, sorted keys)

dtype codes: 0 float32, 1 float64, 2 int64.  The trailing JSON block carries
the run configuration, model configuration, epoch and optimizer step.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CNSF"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}


class CheckpointFormatError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<II", VERSION, len(self.tensors))]
        for name, arr in self.tensors.items():
            arr = np.asarray(arr)
            code = CODES.get(arr.dtype)
            if code is None:
                raise TypeError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
            raw_name = name.encode("utf-8")
            parts.append(struct.pack("<I", len(raw_name)))
            parts.append(raw_name)
            parts.append(struct.pack("<BB", code, arr.ndim))
            parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes())
        meta = json.dumps(self.meta, sort_keys=True).encode("utf-8")
        parts.append(struct.pack("<I", len(meta)))
        parts.append(meta)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Checkpoint":
        reader = _Reader(buf)
        if reader.take(4) != MAGIC:
            raise CheckpointFormatError("not a checkpoint file (bad magic)")
        version, count = reader.unpack("<II")
        if version != VERSION:
            raise CheckpointFormatError(f"checkpoint version {version} is not supported (expected {VERSION})")
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = reader.unpack("<I")
            try:
                name = reader.take(name_len).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CheckpointFormatError("tensor name is not valid UTF-8") from exc
            code, rank = reader.unpack("<BB")
            if code not in DTYPES:
                raise CheckpointFormatError(f"tensor {name!r} has unknown dtype code {code}")
            dims = reader.unpack(f"<{rank}I") if rank else ()
            dtype = DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            data = np.frombuffer(reader.take(nbytes), dtype=dtype).reshape(dims)
            if name in tensors:
                raise CheckpointFormatError(f"duplicate tensor name {name!r}")
            tensors[name] = data.astype(dtype.newbyteorder("="))
        (meta_len,) = reader.unpack("<I")
        try:
            meta = json.loads(reader.take(meta_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointFormatError("metadata block is corrupt") from exc
        if reader.pos != len(buf):
            raise CheckpointFormatError("trailing bytes after checkpoint")
        return cls(tensors, meta)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise CheckpointFormatError("checkpoint is truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def checkpoint_save(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(ckpt.to_bytes())


def checkpoint_load(path) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())
