"""Binary tensor containers.

Two little-endian layouts share the same tensor encoding:

* single-tensor file (trajectories, feature dumps):
  magic b"DSID" | version u32 | dtype code u32 | ndim u32 | dims u32[ndim]
  | row-major payload

* named-tensor file with a JSON header (model weights):
  magic b"DSIW" | version u32 | header length u32 | UTF-8 JSON header
  | tensor count u32 | entries of
    name length u32 | UTF-8 name | dtype code u32 | ndim u32
    | dims u32[ndim] | payload

dtype codes: 1 = float64, 2 = float32.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"DSID"
WEIGHTS_MAGIC = b"DSIW"
FORMAT_VERSION = 1

_DTYPE_CODES = {1: np.dtype("<f8"), 2: np.dtype("<f4")}
_CODE_BY_DTYPE = {np.dtype("float64"): 1, np.dtype("float32"): 2}


class ContainerError(IOError):
    """Malformed, truncated or incompatible tensor container."""


def _dtype_code(arr: np.ndarray) -> int:
    code = _CODE_BY_DTYPE.get(arr.dtype)
    if code is None:
        raise ContainerError(f"unsupported dtype {arr.dtype}")
    return code


def _pack_tensor(arr: np.ndarray) -> bytes:
    head = struct.pack("<II", _dtype_code(arr), arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + dims + np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ContainerError(f"{self.path}: truncated container")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def tensor(self) -> np.ndarray:
        code = self.u32()
        dtype = _DTYPE_CODES.get(code)
        if dtype is None:
            raise ContainerError(f"{self.path}: unknown dtype code {code}")
        ndim = self.u32()
        if ndim > 8:
            raise ContainerError(f"{self.path}: implausible rank {ndim}")
        shape = tuple(self.u32() for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = self.take(count * dtype.itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def save_tensor(path, arr: np.ndarray) -> None:
    """Write one array as a single-tensor container."""
    arr = np.asarray(arr)
    payload = TENSOR_MAGIC + struct.pack("<I", FORMAT_VERSION) + _pack_tensor(arr)
    Path(path).write_bytes(payload)


def load_tensor(path) -> np.ndarray:
    """Read a single-tensor container back as an ndarray."""
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != TENSOR_MAGIC:
        raise ContainerError(f"{path}: bad magic, not a tensor container")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise ContainerError(f"{path}: unsupported version {version}")
    arr = r.tensor()
    if r.pos != len(r.data):
        raise ContainerError(f"{path}: trailing bytes after payload")
    return arr


def save_named_tensors(path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write a JSON header plus named tensors."""
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    out = bytearray()
    out += WEIGHTS_MAGIC
    out += struct.pack("<II", FORMAT_VERSION, len(head))
    out += head
    out += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        enc = name.encode("utf-8")
        out += struct.pack("<I", len(enc))
        out += enc
        out += _pack_tensor(np.asarray(arr))
    Path(path).write_bytes(bytes(out))


def load_named_tensors(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read back (header, tensors) from a named-tensor container."""
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != WEIGHTS_MAGIC:
        raise ContainerError(f"{path}: bad magic, not a weights container")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise ContainerError(f"{path}: unsupported version {version}")
    header = json.loads(r.take(r.u32()).decode("utf-8"))
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        tensors[name] = r.tensor()
    if r.pos != len(r.data):
        raise ContainerError(f"{path}: trailing bytes after payload")
    return header, tensors
