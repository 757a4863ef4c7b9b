"""Minimal self-describing binary array format.

One JSON header line, newline-terminated, then the raw little-endian payload:

    {"byte_order":"little-endian","dtype":"f64","order":"row-major","shape":[M,L]}
    <rows * cols * itemsize bytes>

Only 2D float64 ("f64") and complex128 ("c128") arrays exist in this toolkit;
the format stays trivial to parse from any language.
"""

import json
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

_DTYPES = {"f64": np.dtype("<f8"), "c128": np.dtype("<c16")}
_NAMES = {np.dtype(np.float64): "f64", np.dtype(np.complex128): "c128"}


def array_file_bytes(arr):
    """Serialize a 1D/2D array (1D is written as a single column)."""
    arr = np.asarray(arr)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidInputError(f"array files hold 2D arrays, got ndim={arr.ndim}")
    if arr.dtype not in _NAMES:
        if np.issubdtype(arr.dtype, np.complexfloating):
            arr = arr.astype(np.complex128)
        elif np.issubdtype(arr.dtype, np.floating) or np.issubdtype(arr.dtype, np.integer):
            arr = arr.astype(np.float64)
        else:
            raise InvalidInputError(f"unsupported dtype {arr.dtype}")
    name = _NAMES[arr.dtype]
    header = json.dumps(
        {
            "byte_order": "little-endian",
            "dtype": name,
            "order": "row-major",
            "shape": [int(arr.shape[0]), int(arr.shape[1])],
        },
        sort_keys=True, separators=(",", ":"),
    )
    payload = np.ascontiguousarray(arr).astype(_DTYPES[name]).tobytes()
    return header.encode() + b"\n" + payload


def write_array(path, arr):
    Path(path).write_bytes(array_file_bytes(arr))


def read_array(path):
    blob = Path(path).read_bytes()
    nl = blob.find(b"\n")
    if nl < 0:
        raise InvalidInputError(f"{path}: missing header line")
    try:
        header = json.loads(blob[:nl].decode())
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: bad header: {exc}") from exc
    try:
        dtype = _DTYPES[header["dtype"]]
        rows, cols = (int(v) for v in header["shape"])
    except (KeyError, ValueError) as exc:
        raise InvalidInputError(f"{path}: malformed header fields: {exc}") from exc
    if header.get("byte_order") != "little-endian" or header.get("order") != "row-major":
        raise InvalidInputError(f"{path}: unsupported layout {header}")
    payload = blob[nl + 1:]
    expected = rows * cols * dtype.itemsize
    if len(payload) != expected:
        raise InvalidInputError(f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(rows, cols).astype(dtype.newbyteorder("="))
