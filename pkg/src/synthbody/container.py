"""SBM1 array container.

Layout::

    b"SBM1" | u32 LE header length | UTF-8 JSON header | raw arrays

The header carries free-form metadata plus an ``arrays`` table mapping each
array name to its dtype, shape, byte offset (relative to the start of the
data section) and byte length. Arrays are stored little-endian in C order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"SBM1"

# float32 is the canonical payload type; int32/uint8 carry indices and flags.
SUPPORTED_DTYPES = {"<f4": np.float32, "<f8": np.float64, "<i4": np.int32, "|u1": np.uint8}


class ContainerError(ValueError):
    pass


def _dtype_code(arr: np.ndarray, default_float: str) -> str:
    if arr.dtype.kind == "f":
        return default_float
    if arr.dtype.kind in "iu" and arr.dtype != np.uint8:
        return "<i4"
    if arr.dtype == np.uint8 or arr.dtype.kind == "b":
        return "|u1"
    raise ContainerError(f"unsupported array dtype {arr.dtype}")


def dumps(meta: Mapping[str, Any], arrays: Mapping[str, np.ndarray], float_dtype: str = "<f4") -> bytes:
    """Serialize metadata and named arrays to SBM1 bytes.

    Float arrays are written as ``float_dtype`` (float32 by default); integer
    arrays as int32, booleans as uint8. Array order follows the mapping order
    so identical inputs produce identical bytes.
    """
    if "arrays" in meta:
        raise ContainerError("'arrays' is a reserved header key")
    table = {}
    chunks = []
    offset = 0
    for name, value in arrays.items():
        arr = np.asarray(value)
        code = _dtype_code(arr, float_dtype)
        if code == "<i4" and arr.size and (arr.max() > np.iinfo(np.int32).max or arr.min() < np.iinfo(np.int32).min):
            raise ContainerError(f"array {name!r} overflows int32")
        raw = np.ascontiguousarray(arr, dtype=np.dtype(code)).tobytes()
        table[name] = {"dtype": code, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    header = dict(meta)
    header["arrays"] = table
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(blob)) + blob + b"".join(chunks)


def loads(data: bytes) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    if len(data) < 8 or data[:4] != MAGIC:
        raise ContainerError("not an SBM1 container (bad magic)")
    (hlen,) = struct.unpack("<I", data[4:8])
    if 8 + hlen > len(data):
        raise ContainerError("truncated header")
    try:
        header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"corrupt header: {exc}") from exc
    table = header.pop("arrays", {})
    base = 8 + hlen
    arrays = {}
    for name, info in table.items():
        code = info["dtype"]
        if code not in SUPPORTED_DTYPES:
            raise ContainerError(f"array {name!r}: unsupported dtype {code}")
        dtype = np.dtype(code)
        shape = tuple(int(s) for s in info["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * dtype.itemsize
        if nbytes != info["nbytes"]:
            raise ContainerError(f"array {name!r}: byte length does not match shape")
        start = base + int(info["offset"])
        if start + nbytes > len(data):
            raise ContainerError(f"array {name!r}: truncated data")
        arrays[name] = np.frombuffer(data, dtype=dtype, count=count, offset=start).reshape(shape).copy()
    return header, arrays


def write(path: str | Path, meta: Mapping[str, Any], arrays: Mapping[str, np.ndarray], float_dtype: str = "<f4") -> None:
    Path(path).write_bytes(dumps(meta, arrays, float_dtype=float_dtype))


def read(path: str | Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
