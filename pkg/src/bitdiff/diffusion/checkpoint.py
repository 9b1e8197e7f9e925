"""Binary checkpoint and sample-archive formats.

Checkpoint layout (all integers little-endian)::

    b"BIDM" | u32 version | u32 len + UTF-8 JSON UNetSpec | u32 record count
    record: u32 name len | name | u8 dtype tag | u8 ndim | u64 dims... | raw data

Sample archive::

    b"BDSM" | u32 count | u32 ndim | u32 dims... | float32 data
"""

from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

from .unet import UNetSpec

CHECKPOINT_MAGIC = b"BIDM"
CHECKPOINT_VERSION = 1
SAMPLES_MAGIC = b"BDSM"

_DTYPE_TAGS = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("<i8"): 2,
    np.dtype("<i4"): 3,
    np.dtype("<u8"): 4,
    np.dtype("u1"): 5,
}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, spec: UNetSpec, tensors: dict) -> None:
    spec_bytes = spec.to_json().encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(spec_bytes)))
        f.write(spec_bytes)
        f.write(struct.pack("<I", len(tensors)))
        for name, value in tensors.items():
            arr = np.asarray(value)
            dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
            if dt not in _DTYPE_TAGS:
                raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
            name_bytes = name.encode()
            f.write(struct.pack("<I", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<BB", _DTYPE_TAGS[dt], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype=dt.newbyteorder("<")).tobytes())


def load_checkpoint(path) -> tuple[UNetSpec, "OrderedDict[str, np.ndarray]"]:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {buf[:4]!r})")
    version, spec_len = struct.unpack_from("<II", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    spec = UNetSpec.from_json(buf[off : off + spec_len].decode())
    off += spec_len
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off : off + name_len].decode()
        off += name_len
        tag, ndim = struct.unpack_from("<BB", buf, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}Q", buf, off)
        off += 8 * ndim
        dt = _TAG_DTYPES[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        tensors[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=off).reshape(shape).copy()
        off += nbytes
    return spec, tensors


def save_samples(path, samples: np.ndarray) -> None:
    arr = np.ascontiguousarray(samples, dtype="<f4")
    with open(path, "wb") as f:
        f.write(SAMPLES_MAGIC)
        f.write(struct.pack("<II", arr.shape[0], arr.ndim - 1))
        f.write(struct.pack(f"<{arr.ndim - 1}I", *arr.shape[1:]))
        f.write(arr.tobytes())


def load_samples(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != SAMPLES_MAGIC:
        raise CheckpointError(f"{path}: not a sample archive (bad magic {buf[:4]!r})")
    count, ndim = struct.unpack_from("<II", buf, 4)
    shape = struct.unpack_from(f"<{ndim}I", buf, 12)
    off = 12 + 4 * ndim
    return np.frombuffer(buf, dtype="<f4", offset=off).reshape((count,) + shape).astype(np.float32)
