"""Binary tensor and checkpoint formats.

Both formats are little-endian and row-major, designed to be readable
without this package.

Tensor file ("HVT1"):
    magic  4 bytes  b"HVT1"
    ndim   u8
    dims   ndim * u64
    dtype  u8       1 = float32, 2 = float64
    data   row-major payload

Checkpoint file ("HVW1"):
    magic    4 bytes  b"HVW1"
    version  u16      currently 1
    count    u32      number of entries
    manifest count * (name_len u16, name utf-8, ndim u8, dims ndim*u64,
                      dtype u8 where 1 = float32)
    data     raw payloads, row-major, in manifest order
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

__all__ = ["write_tensor", "read_tensor", "write_checkpoint", "read_checkpoint"]

_TENSOR_MAGIC = b"HVT1"
_CKPT_MAGIC = b"HVW1"
_CKPT_VERSION = 1
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES_BY_KIND = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def write_tensor(path, arr: np.ndarray) -> None:
    """Write a float32/float64 array as an HVT1 file."""
    arr = np.asarray(arr)
    if arr.dtype not in _CODES_BY_KIND:
        raise FormatError(f"unsupported dtype {arr.dtype}; use float32 or float64")
    code = _CODES_BY_KIND[arr.dtype]
    with open(path, "wb") as f:
        f.write(_TENSOR_MAGIC)
        f.write(struct.pack("<B", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(struct.pack("<B", code))
        f.write(np.ascontiguousarray(arr).astype(_DTYPE_CODES[code]).tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}")
    return buf


def read_tensor(path) -> np.ndarray:
    """Read an HVT1 file; raises FormatError on malformed input."""
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != _TENSOR_MAGIC:
            raise FormatError(f"{path}: not an HVT1 tensor file")
        ndim = struct.unpack("<B", _read_exact(f, 1, "ndim"))[0]
        dims = struct.unpack(f"<{ndim}Q", _read_exact(f, 8 * ndim, "dims"))
        code = struct.unpack("<B", _read_exact(f, 1, "dtype"))[0]
        if code not in _DTYPE_CODES:
            raise FormatError(f"{path}: unknown dtype code {code}")
        dt = _DTYPE_CODES[code]
        count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        payload = _read_exact(f, count * dt.itemsize, "payload")
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    return np.frombuffer(payload, dtype=dt).reshape(dims).copy()


def write_checkpoint(path, entries: dict[str, np.ndarray]) -> None:
    """Write named float32 tensors as an HVW1 checkpoint (manifest order = dict order)."""
    blobs = []
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<HI", _CKPT_VERSION, len(entries)))
        for name, arr in entries.items():
            # np.ascontiguousarray would promote 0-dim entries to shape (1,)
            arr = np.asarray(arr, dtype="<f4", order="C")
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(struct.pack("<B", 1))
            blobs.append(arr.tobytes())
        for blob in blobs:
            f.write(blob)


def read_checkpoint(path) -> dict[str, np.ndarray]:
    """Read an HVW1 checkpoint into an ordered name -> float32 array dict."""
    path = Path(path)
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != _CKPT_MAGIC:
            raise FormatError(f"{path}: not an HVW1 checkpoint")
        version, count = struct.unpack("<HI", _read_exact(f, 6, "header"))
        if version != _CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        manifest = []
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, name_len, "name").decode("utf-8")
            ndim = struct.unpack("<B", _read_exact(f, 1, "ndim"))[0]
            dims = struct.unpack(f"<{ndim}Q", _read_exact(f, 8 * ndim, "dims"))
            code = struct.unpack("<B", _read_exact(f, 1, "dtype"))[0]
            if code != 1:
                raise FormatError(f"{path}: entry {name!r} has dtype code {code}, expected 1")
            manifest.append((name, dims))
        out = {}
        for name, dims in manifest:
            n = int(np.prod(dims, dtype=np.int64)) if dims else 1
            payload = _read_exact(f, 4 * n, f"payload of {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after payloads")
    return out
