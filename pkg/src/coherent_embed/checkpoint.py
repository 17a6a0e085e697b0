"""Binary checkpoint and tensor file formats.

Checkpoint (``TCE1``), little-endian::

    b"TCE1"  u8 version  u32 meta_len  meta (UTF-8 JSON)  payload  u64 checksum

``meta`` holds the epoch counter, config snapshot, rng states, dataset index
and an ``arrays`` directory of ``{name: {"shape": [...], "offset": n}}`` with
byte offsets into the payload.  The payload is the concatenation of every
array as float32, in name order.  The checksum is 64-bit FNV-1a over all preceding bytes.

Tensor file (``TCEB``)::

    b"TCEB"  u32 rank  rank * u32 dims  row-major float32 data
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"TCE1"
VERSION = 1
TENSOR_MAGIC = b"TCEB"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


def fnv1a64(data: bytes, h: int = _FNV_OFFSET) -> int:
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK
    return h


@dataclass
class Checkpoint:
    arrays: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def group(self, prefix: str) -> dict:
        p = prefix + "/"
        return {k[len(p):]: v for k, v in self.arrays.items() if k.startswith(p)}


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    directory = {}
    chunks = []
    offset = 0
    # sorted so a loaded checkpoint re-saves to the same bytes
    for name, arr in sorted(ckpt.arrays.items()):
        data = np.asarray(arr, dtype="<f4").tobytes()
        directory[name] = {"shape": list(np.shape(arr)), "offset": offset}
        chunks.append(data)
        offset += len(data)
    meta = dict(ckpt.meta, arrays=directory)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<BI", VERSION, len(meta_bytes)) + meta_bytes + b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<Q", fnv1a64(body)))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 + 1 + 4 + 8 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = raw[4]
    if version != VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    body, (stored,) = raw[:-8], struct.unpack("<Q", raw[-8:])
    if fnv1a64(body) != stored:
        raise ChecksumError(f"{path}: checksum mismatch (file truncated or corrupted)")
    (meta_len,) = struct.unpack("<I", raw[5:9])
    meta = json.loads(body[9:9 + meta_len].decode("utf-8"))
    payload = body[9 + meta_len:]
    arrays = {}
    for name, entry in meta.pop("arrays").items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(payload, dtype="<f4", count=count, offset=entry["offset"]).astype(np.float32).reshape(shape)
    return Checkpoint(arrays, meta)


def write_tensor(path, array) -> None:
    arr = np.asarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != TENSOR_MAGIC:
        raise CheckpointError(f"{path}: not a TCEB tensor file")
    (rank,) = struct.unpack("<I", raw[4:8])
    dims = struct.unpack(f"<{rank}I", raw[8:8 + 4 * rank])
    count = int(np.prod(dims, dtype=np.int64))
    data = raw[8 + 4 * rank:]
    if len(data) != 4 * count:
        raise CheckpointError(f"{path}: expected {count} floats, found {len(data) // 4}")
    return np.frombuffer(data, dtype="<f4").astype(np.float32).reshape(dims)
