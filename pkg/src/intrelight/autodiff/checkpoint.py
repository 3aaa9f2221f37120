"""Binary checkpoint container.

Layout (little-endian):
    magic b"ILCK", u32 version, u32 header length, JSON header,
    u32 record count, then per record:
        u16 name length, name (utf-8), u8 ndim, u32 dims..., f32 payload
    and the end marker b"ENDK".
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ILCK"
END = b"ENDK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    head = json.dumps(header, sort_keys=True).encode()
    chunks = [MAGIC, struct.pack("<II", VERSION, len(head)), head, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        key = name.encode()
        chunks.append(struct.pack("<H", len(key)) + key + struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    chunks.append(END)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load_arrays(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"truncated checkpoint {path}")
        out = raw[pos : pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint")
    version, hlen = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version}, expected {VERSION}")
    header = json.loads(take(hlen))
    (count,) = struct.unpack("<I", take(4))
    arrays = {}
    for _ in range(count):
        (klen,) = struct.unpack("<H", take(2))
        name = take(klen).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    if take(4) != END:
        raise CheckpointError(f"missing end marker in {path}")
    return header, arrays
