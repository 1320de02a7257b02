"""Binary container for gridded float arrays (GRD1).

Layout, little-endian throughout:

    magic    4 bytes   b"GRD1"
    version  u16       currently 1
    dtype    u8        0 = float32, 1 = float64
    ndim     u8
    dims     ndim * u64
    names    u32 count, then per entry: u32 byte length + UTF-8 bytes
    payload  prod(dims) * itemsize bytes, row-major (C order)

The name table usually labels the channel axis; readers do not interpret
it beyond returning the strings. Unknown versions and truncated or
oversized payloads are hard errors, never guesses.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"GRD1"
VERSION = 1

_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class GridFileError(Exception):
    """Malformed, truncated, or unsupported GRD1 data."""


def pack(array: np.ndarray, names: tuple[str, ...] = ()) -> bytes:
    """Serialize one array (with optional channel names) to GRD1 bytes."""
    arr = np.asarray(array)
    if arr.dtype not in _DTYPE_TO_CODE:
        raise GridFileError(
            f"unsupported dtype {arr.dtype}; GRD1 holds float32 or float64"
        )
    if arr.ndim == 0:
        raise GridFileError("GRD1 arrays must have at least one dimension")
    arr = np.ascontiguousarray(arr)
    head = [MAGIC, struct.pack("<H", VERSION)]
    head.append(struct.pack("<BB", _DTYPE_TO_CODE[arr.dtype], arr.ndim))
    head.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    head.append(struct.pack("<I", len(names)))
    for name in names:
        raw = name.encode("utf-8")
        head.append(struct.pack("<I", len(raw)))
        head.append(raw)
    # little-endian payload regardless of host byte order
    payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    return b"".join(head) + payload


def unpack(buf: bytes, offset: int = 0) -> tuple[np.ndarray, list[str], int]:
    """Decode one GRD1 record from ``buf`` starting at ``offset``.

    Returns (array, names, offset just past the record) so callers can
    unpack concatenated records from a single buffer.
    """
    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(buf):
            raise GridFileError("truncated GRD1 data")
        piece = buf[offset:offset + n]
        offset += n
        return piece

    if take(4) != MAGIC:
        raise GridFileError("bad magic; not a GRD1 record")
    (version,) = struct.unpack("<H", take(2))
    if version != VERSION:
        raise GridFileError(f"unsupported GRD1 version {version}")
    code, ndim = struct.unpack("<BB", take(2))
    if code not in _CODE_TO_DTYPE:
        raise GridFileError(f"unknown dtype code {code}")
    if ndim == 0:
        raise GridFileError("zero-dimensional GRD1 record")
    dims = struct.unpack(f"<{ndim}Q", take(8 * ndim))
    if any(d == 0 for d in dims):
        raise GridFileError(f"zero-length dimension in {dims}")
    (n_names,) = struct.unpack("<I", take(4))
    names = []
    for _ in range(n_names):
        (ln,) = struct.unpack("<I", take(4))
        names.append(take(ln).decode("utf-8"))
    dtype = _CODE_TO_DTYPE[code]
    count = int(np.prod(dims))
    payload = take(count * dtype.itemsize)
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return arr.astype(dtype.newbyteorder("="), copy=True), names, offset


def write_grd(path: str | Path, array: np.ndarray,
              names: tuple[str, ...] = ()) -> None:
    """Write one array to ``path`` as a GRD1 file."""
    Path(path).write_bytes(pack(array, names))


def read_grd(path: str | Path) -> tuple[np.ndarray, list[str]]:
    """Read a GRD1 file; the whole file must be exactly one record."""
    buf = Path(path).read_bytes()
    arr, names, end = unpack(buf)
    if end != len(buf):
        raise GridFileError(
            f"{path}: {len(buf) - end} trailing bytes after the record"
        )
    return arr, names
