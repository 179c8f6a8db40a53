"""Versioned per-session checkpoint container.

Layout: 8-byte magic ``MABRCKPT``, big-endian uint32 format version,
big-endian uint64 payload length, then an ``.npz`` payload. Scalar metadata
is stored as a JSON string under the ``meta`` key.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"MABRCKPT"
FORMAT_VERSION = 1
_HEADER = struct.Struct(">8sIQ")


def save_checkpoint(path, arrays: dict, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    np.savez(buf, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    payload = buf.getvalue()
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(payload)))
        f.write(payload)
    return path


def load_checkpoint(path) -> tuple[dict, dict]:
    """Returns ``(arrays, meta)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: too short for a checkpoint header")
    magic, version, length = _HEADER.unpack(raw[:_HEADER.size])
    if magic != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    payload = raw[_HEADER.size:]
    if len(payload) != length:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header says {length}")
    with np.load(io.BytesIO(payload), allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files if k != "meta"}
        meta = json.loads(str(z["meta"]))
    return arrays, meta
