"""Little-endian tensor sections.

Each section is::

    u16 name length | utf-8 name | u8 ndim | u64 shape[ndim] | f64 payload (LE)

Sections are concatenated with no padding. Round trips are bit-exact.
"""

from __future__ import annotations

import struct
from collections.abc import Mapping

import numpy as np

from .errors import ModelFormatError

_NAME_LEN = struct.Struct("<H")
_NDIM = struct.Struct("<B")
_DIM = struct.Struct("<Q")


def pack_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    """Serialize named float64 tensors in mapping order."""
    chunks: list[bytes] = []
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        data = np.ascontiguousarray(array, dtype="<f8")
        chunks.append(_NAME_LEN.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_NDIM.pack(data.ndim))
        for size in data.shape:
            chunks.append(_DIM.pack(size))
        chunks.append(data.tobytes(order="C"))
    return b"".join(chunks)


def unpack_tensors(payload: bytes) -> dict[str, np.ndarray]:
    """Inverse of `pack_tensors`; raises ModelFormatError on truncation."""
    tensors: dict[str, np.ndarray] = {}
    view = memoryview(payload)
    pos = 0

    def _take(size: int) -> memoryview:
        nonlocal pos
        if pos + size > len(view):
            raise ModelFormatError(
                f"tensor payload truncated at byte {pos} (need {size} more)"
            )
        chunk = view[pos : pos + size]
        pos += size
        return chunk

    while pos < len(view):
        (name_len,) = _NAME_LEN.unpack(_take(_NAME_LEN.size))
        name = bytes(_take(name_len)).decode("utf-8")
        (ndim,) = _NDIM.unpack(_take(_NDIM.size))
        shape = tuple(_DIM.unpack(_take(_DIM.size))[0] for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = _take(count * 8)
        array = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        if name in tensors:
            raise ModelFormatError(f"duplicate tensor {name}")
        tensors[name] = array
    return tensors
