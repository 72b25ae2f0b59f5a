"""Versioned binary checkpoints.

Layout: magic, u32 version, u32 header length, JSON header, raw tensor
bytes, sha256 digest of everything before it.  The header carries the
model configuration plus a tensor manifest (name, shape, dtype) in the
exact order the tensor bytes follow; tensors are little-endian 32-bit
floats.  The tokenizer vocabulary lives in a JSON sidecar next to the
checkpoint (same path + ".vocab.json").
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CQACKPT\x00"
VERSION = 1
TENSOR_DTYPE = "<f4"


class CheckpointError(Exception):
    pass


def vocab_sidecar(path: str | Path) -> Path:
    return Path(str(path) + ".vocab.json")


def save_checkpoint(
    path: str | Path, header: dict, tensors: dict[str, np.ndarray]
) -> None:
    """Write tensors in their dict order; the manifest records that order."""
    manifest = [
        {"name": name, "shape": list(arr.shape), "dtype": TENSOR_DTYPE}
        for name, arr in tensors.items()
    ]
    full_header = dict(header)
    full_header["tensors"] = manifest
    header_bytes = json.dumps(full_header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(header_bytes)), header_bytes]
    for arr in tensors.values():
        parts.append(np.ascontiguousarray(arr, dtype=TENSOR_DTYPE).tobytes())
    payload = b"".join(parts)
    digest = hashlib.sha256(payload).digest()
    Path(path).write_bytes(payload + digest)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 + 32:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    payload, digest = data[:-32], data[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupt)")
    pos = len(MAGIC)
    if payload[:pos] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    (version,) = struct.unpack_from("<I", payload, pos)
    pos += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    (header_len,) = struct.unpack_from("<I", payload, pos)
    pos += 4
    header = json.loads(payload[pos : pos + header_len].decode("utf-8"))
    pos += header_len
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if pos + nbytes > len(payload):
            raise CheckpointError(f"{path}: tensor {entry['name']} runs past end of file")
        arr = np.frombuffer(payload, dtype=TENSOR_DTYPE, count=count, offset=pos)
        tensors[entry["name"]] = arr.reshape(shape).copy()
        pos += nbytes
    if pos != len(payload):
        raise CheckpointError(f"{path}: trailing bytes after tensor data")
    del header["tensors"]
    return header, tensors
