"""Binary container for named weight arrays.

Layout (all integers little-endian, no padding):

    u64                 entry count
    per entry:
        u32             name length in bytes
        bytes           utf-8 name
        u8              dtype code (0 = float32, 1 = float64)
        u8              rank
        u64 * rank      extents
        u64             byte offset of the array inside the payload
    payload             row-major array bytes, concatenated in entry order

Entries are sorted by name so identical weight sets produce identical files.
"""

from __future__ import annotations

import struct

import numpy as np

from .tensor import Tensor

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays):
    """Write a name -> Tensor/ndarray mapping to ``path``."""
    items = []
    for name in sorted(arrays):
        arr = arrays[name]
        if isinstance(arr, Tensor):
            arr = arr.data
        arr = np.asarray(arr)
        if not arr.flags.c_contiguous:
            arr = arr.copy(order="C")  # ascontiguousarray would force rank >= 1
        if arr.dtype not in _CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for '{name}'")
        items.append((name, arr))

    header = bytearray()
    header += struct.pack("<Q", len(items))
    offset = 0
    for name, arr in items:
        raw = name.encode("utf-8")
        header += struct.pack("<I", len(raw))
        header += raw
        header += struct.pack("<BB", _CODES[arr.dtype], arr.ndim)
        header += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
        header += struct.pack("<Q", offset)
        offset += arr.nbytes

    with open(path, "wb") as f:
        f.write(bytes(header))
        for _, arr in items:
            f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def load_checkpoint(path):
    """Read the container back into a name -> ndarray dict."""
    with open(path, "rb") as f:
        blob = f.read()

    def need(n, what):
        if pos + n > len(blob):
            raise CheckpointError(f"truncated checkpoint while reading {what}")

    pos = 0
    need(8, "entry count")
    (count,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    metas = []
    for i in range(count):
        need(4, f"entry {i} name length")
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        need(nlen, f"entry {i} name")
        name = blob[pos : pos + nlen].decode("utf-8")
        pos += nlen
        need(2, f"entry {i} dtype/rank")
        code, rank = struct.unpack_from("<BB", blob, pos)
        pos += 2
        if code not in _DTYPES:
            raise CheckpointError(f"unknown dtype code {code} for '{name}'")
        need(8 * rank, f"entry {i} extents")
        shape = struct.unpack_from(f"<{rank}Q", blob, pos) if rank else ()
        pos += 8 * rank
        need(8, f"entry {i} offset")
        (off,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        metas.append((name, _DTYPES[code], shape, off))

    payload = blob[pos:]
    out = {}
    for name, dtype, shape, off in metas:
        n = int(np.prod(shape)) if shape else 1
        end = off + n * dtype.itemsize
        if end > len(payload):
            raise CheckpointError(f"payload truncated for '{name}'")
        arr = np.frombuffer(payload, dtype=dtype, count=n, offset=off).reshape(shape)
        out[name] = arr.astype(dtype.newbyteorder("="), copy=True)
    return out
