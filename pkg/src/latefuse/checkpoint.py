"""Binary checkpoint container: metadata plus named float64 arrays.

Layout (little endian):

    magic  b"LFCK"
    u8     format version
    u32    metadata length, then UTF-8 JSON (sorted keys)
    u32    array count, then per array:
        u32 name length, UTF-8 name
        u8  ndim, u32 per dimension
        raw float64 data, C order

Raw 64-bit storage makes the write/read round trip bit-exact, and the
writer is free of timestamps or other incidental state, so identical
inputs produce byte-identical files.
"""

from __future__ import annotations

import json
import struct
from typing import Dict, Tuple

import numpy as np

from .kernel import DTYPE

MAGIC = b"LFCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, truncated, or version-incompatible checkpoint."""


def save_checkpoint(path, meta: dict, arrays: Dict[str, np.ndarray]) -> None:
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", FORMAT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype=DTYPE)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(arr.astype("<f8", copy=False).tobytes())


def _read_exact(f, count: int) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise CheckpointError("checkpoint file is truncated")
    return data


def load_checkpoint(path) -> Tuple[dict, Dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"not a checkpoint file: bad magic {magic!r}")
        (version,) = struct.unpack("<B", _read_exact(f, 1))
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"checkpoint format version {version} is not supported "
                f"(expected {FORMAT_VERSION})")
        (meta_len,) = struct.unpack("<I", _read_exact(f, 4))
        meta = json.loads(_read_exact(f, meta_len).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        arrays: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1))
            shape = tuple(struct.unpack("<I", _read_exact(f, 4))[0]
                          for _ in range(ndim))
            n_items = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(f, 8 * n_items), dtype="<f8")
            arrays[name] = data.reshape(shape).astype(DTYPE)
        return meta, arrays
