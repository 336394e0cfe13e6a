"""Binary tensor and checkpoint formats.

Tensor payload ("DIPT"):
    magic 'DIPT' | u32 version | u32 rank | u64 dims[rank] | f64 data (LE, C order)

Checkpoint ("DIPP"):
    magic 'DIPP' | u32 version | u32 count | count x (u32 name_len | utf-8 name | DIPT)

Everything is little-endian. Data is always stored as 64-bit floats regardless
of the active compute precision.
"""

from __future__ import annotations

import io
import struct

import numpy as np

TENSOR_MAGIC = b"DIPT"
CHECKPOINT_MAGIC = b"DIPP"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def write_tensor(buf, arr) -> None:
    # np.ascontiguousarray would promote rank-0 to rank-1, so ask for C order
    # without the rank floor.
    arr = np.asarray(arr, dtype=np.float64, order="C")
    buf.write(TENSOR_MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(arr.astype("<f8").tobytes())


def read_tensor(buf) -> np.ndarray:
    magic = buf.read(4)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}")
    version, rank = struct.unpack("<II", _read_exact(buf, 8))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported tensor format version {version}")
    dims = struct.unpack(f"<{rank}Q", _read_exact(buf, 8 * rank)) if rank else ()
    count = int(np.prod(dims)) if dims else 1
    data = np.frombuffer(_read_exact(buf, 8 * count), dtype="<f8")
    return data.reshape(dims).astype(np.float64)


def save_tensor(path, arr) -> None:
    with open(path, "wb") as f:
        write_tensor(f, arr)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tensor(f)


def save_checkpoint(path, named: dict) -> None:
    """Write a name->array table; iteration order of `named` is preserved."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(named)))
        for name, arr in named.items():
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            write_tensor(f, arr)


def load_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        version, count = struct.unpack("<II", _read_exact(f, 8))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, nlen).decode("utf-8")
            out[name] = read_tensor(f)
        return out


def tensor_bytes(arr) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, arr)
    return buf.getvalue()


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError("truncated stream")
    return data
