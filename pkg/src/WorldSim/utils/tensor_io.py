"""
Binary tensor files (``.wst``).

A file is a fixed 32-byte little-endian header followed by the raw C-ordered array
data::

    magic    4 bytes   b"WSTN"
    version  uint16    format version
    dtype    uint8     dtype code, see DTYPE_CODES
    rank     uint8     number of dimensions (at most 6)
    dims     6*uint32  dimensions, unused trailing entries are 0
"""

import logging
import os
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Union

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b"WSTN"
FORMAT_VERSION = 1
MAX_RANK = 6

HEADER_DTYPE = np.dtype(
    [
        ("magic", "S4"),
        ("version", "<u2"),
        ("dtype", "u1"),
        ("rank", "u1"),
        ("dims", "<u4", (MAX_RANK,)),
    ]
)

DTYPE_CODES: Mapping[int, np.dtype] = MappingProxyType(
    {
        1: np.dtype("<f4"),
        2: np.dtype("<f8"),
        3: np.dtype("u1"),
        4: np.dtype("<i2"),
        5: np.dtype("<i4"),
        6: np.dtype("<i8"),
    }
)


class TensorFormatError(ValueError):
    """Raised when a binary tensor file is malformed or cannot be represented."""


def _dtype_code(dtype: np.dtype) -> int:
    normalized = np.dtype(dtype).newbyteorder("<")
    for code, candidate in DTYPE_CODES.items():
        if normalized == candidate:
            return code
    raise TensorFormatError(f"Unsupported dtype {dtype} for tensor files")


def write_tensor(path: Union[str, Path], array: np.ndarray) -> None:
    """
    Write an array to a binary tensor file.

    :param path: Destination file. Written atomically through a temporary file.
    :param array: Array of rank at most 6 with one of the supported dtypes.
    """
    array = np.asarray(array)
    if array.ndim > MAX_RANK:
        raise TensorFormatError(
            f"Tensor of rank {array.ndim} exceeds the maximum rank {MAX_RANK}"
        )
    code = _dtype_code(array.dtype)
    header = np.zeros((), dtype=HEADER_DTYPE)
    header["magic"] = MAGIC
    header["version"] = FORMAT_VERSION
    header["dtype"] = code
    header["rank"] = array.ndim
    header["dims"][: array.ndim] = array.shape
    path = Path(path)
    tmp_path = path.with_name(path.name + ".tmp")
    with open(tmp_path, "wb") as handle:
        handle.write(header.tobytes())
        handle.write(np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes())
    os.replace(tmp_path, path)
    logger.debug("Wrote tensor of shape %s to %s", array.shape, path)


def read_tensor(path: Union[str, Path]) -> np.ndarray:
    """Read an array written by :func:`write_tensor`."""
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_DTYPE.itemsize:
        raise TensorFormatError(f"File {path} is too short to hold a tensor header")
    header = np.frombuffer(raw[: HEADER_DTYPE.itemsize], dtype=HEADER_DTYPE)[0]
    if header["magic"] != MAGIC:
        raise TensorFormatError(f"File {path} does not start with magic {MAGIC!r}")
    if header["version"] != FORMAT_VERSION:
        raise TensorFormatError(
            f"File {path} has format version {header['version']}, "
            f"expected {FORMAT_VERSION}"
        )
    code = int(header["dtype"])
    if code not in DTYPE_CODES:
        raise TensorFormatError(f"File {path} has unknown dtype code {code}")
    rank = int(header["rank"])
    if rank > MAX_RANK:
        raise TensorFormatError(f"File {path} declares rank {rank}")
    shape = tuple(int(dim) for dim in header["dims"][:rank])
    dtype = DTYPE_CODES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    body = raw[HEADER_DTYPE.itemsize :]
    if len(body) != expected:
        raise TensorFormatError(
            f"File {path} holds {len(body)} data bytes, header implies {expected}"
        )
    return np.frombuffer(body, dtype=dtype).reshape(shape).copy()
