"""Binary checkpoint container.

Layout: magic "FACT", format version (u32 LE), JSON header length (u64 LE),
the JSON header itself, then raw little-endian float32 tensor payloads in
manifest order. The header carries the tokenizer config, an ordered tensor
manifest (name, shape, byte offset into the payload section), and any extra
metadata the writer supplies (training step, seeds).
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"FACT"
VERSION = 1


class CheckpointError(RuntimeError):
    """Raised when a checkpoint file cannot be read or written safely."""


def write_checkpoint(path, config, tensors, extra=None):
    """Write config + named float32 tensors; manifest order = dict order."""
    names = list(tensors.keys())
    if len(names) != len(set(names)):
        raise CheckpointError("duplicate tensor names in checkpoint manifest")
    manifest = []
    offset = 0
    payloads = []
    for name in names:
        arr = tensors[name]
        arr = arr.data if hasattr(arr, "data") and not isinstance(arr, np.ndarray) else np.asarray(arr)
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr)
        offset += arr.nbytes
    header = {"config": config, "manifest": manifest}
    if extra:
        header["extra"] = extra
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for arr in payloads:
            f.write(arr.astype("<f4", copy=False).tobytes())


def read_checkpoint(path):
    """Read (config, tensors, extra); validates magic, version, and sizes."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16:
        raise CheckpointError(f"{path}: truncated before header (only {len(blob)} bytes)")
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}, expected {VERSION}")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    if len(blob) < 16 + header_len:
        raise CheckpointError(f"{path}: truncated inside JSON header")
    try:
        header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt JSON header: {exc}") from None
    payload = blob[16 + header_len:]
    tensors = {}
    for entry in header.get("manifest", []):
        name = entry["name"]
        shape = tuple(entry["shape"])
        offset = entry["offset"]
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload for tensor {name!r}")
        flat = np.frombuffer(payload[offset:offset + nbytes], dtype="<f4")
        tensors[name] = flat.reshape(shape).astype(np.float32)
    return header.get("config", {}), tensors, header.get("extra", {})
