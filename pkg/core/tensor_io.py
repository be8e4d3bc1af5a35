"""
RSTE tensor files.

Layout: magic ``RSTE`` | version u8 | dtype code u8 | rank u8 |
dims (u32 little-endian, one per axis) | row-major little-endian payload.

Only float32 and uint8 are stored. float64 input is rounded to float32 on
write, so latents kept in double precision come back as float32.
"""

import os
import struct

import numpy as np
import torch

from .errors import FormatError

MAGIC: bytes = b"RSTE"
VERSION: int = 1

DTYPE_CODES: dict[int, np.dtype] = {
    0: np.dtype("<f4"),
    1: np.dtype("u1"),
}
CODES_BY_KIND: dict[str, int] = {"float32": 0, "uint8": 1}

_HEADER = struct.Struct("<4sBBB")


def atomic_write(path: str, data: bytes) -> None:
    temp_file: str = path + ".tmp"

    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)

        with open(temp_file, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(temp_file, path)
    except OSError as e:
        if os.path.exists(temp_file):
            try:
                os.remove(temp_file)
            except OSError:
                pass
        raise IOError(f"Error writing {path}") from e


def encode_tensor(array: np.ndarray | torch.Tensor) -> bytes:
    if isinstance(array, torch.Tensor):
        array = array.detach().cpu().numpy()
    array = np.asarray(array)

    kind = array.dtype.name
    if kind == "float64":
        # Latents carried in double precision are stored as float32.
        kind = "float32"
    if kind not in CODES_BY_KIND:
        raise FormatError(f"Unsupported dtype for tensor file: {array.dtype}")
    if array.ndim > 255:
        raise FormatError("Tensor rank exceeds 255")

    code = CODES_BY_KIND[kind]
    payload = np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes()
    dims = struct.pack(f"<{array.ndim}I", *array.shape)
    return _HEADER.pack(MAGIC, VERSION, code, array.ndim) + dims + payload


def decode_tensor(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise FormatError("Tensor file header is truncated")

    magic, version, code, rank = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"Bad tensor file magic: {magic!r}")
    if version != VERSION:
        raise FormatError(f"Unsupported tensor file version: {version}")
    if code not in DTYPE_CODES:
        raise FormatError(f"Unknown dtype code: {code}")

    offset = _HEADER.size
    dims_size = 4 * rank
    if len(data) < offset + dims_size:
        raise FormatError("Tensor file dims are truncated")
    dims = struct.unpack_from(f"<{rank}I", data, offset)
    offset += dims_size

    dtype = DTYPE_CODES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = data[offset:]
    if len(payload) < expected:
        raise FormatError(
            f"Tensor payload is truncated: {len(payload)} of {expected} bytes"
        )
    if len(payload) > expected:
        raise FormatError("Tensor payload has trailing bytes")

    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def save_tensor(path: str, array: np.ndarray | torch.Tensor) -> None:
    atomic_write(path, encode_tensor(array))


def load_tensor(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    return decode_tensor(data)
