"""Packed binary tensor files for caching preprocessed clips and saliency volumes.

Layout: 8-byte magic, 1 version byte, four little-endian uint32 dims
(T, H, W, C), then float32 little-endian payload in C order. Rank-3
volumes are stored with C=1 and squeezed back on read.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MXIDPACK"
VERSION = 1

_HEADER = struct.Struct("<8sB4I")


def write_packed(path, array):
    """Write a (T, H, W, C) or (T, H, W) float volume to `path`."""
    arr = np.asarray(array, dtype=np.float32)
    squeezed = arr.ndim == 3
    if squeezed:
        arr = arr[..., np.newaxis]
    if arr.ndim != 4:
        raise ValueError(f"expected rank 3 or 4 tensor, got shape {arr.shape}")
    path = Path(path)
    header = _HEADER.pack(MAGIC, VERSION, *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return path


def read_packed(path):
    """Read a packed tensor file; returns float32 array of shape (T, H, W, C)."""
    path = Path(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, t, h, w, c = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    count = t * h * w * c
    payload = blob[_HEADER.size:]
    if len(payload) != count * 4:
        raise ValueError(
            f"{path}: payload holds {len(payload)} bytes, header promises {count * 4}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(t, h, w, c)
    return data.astype(np.float32)
