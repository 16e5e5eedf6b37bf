"""Binary parameter container.

Layout (all integers unsigned 32-bit little-endian)::

    b"EIRCKPT1"
    count
    count x { name_len, name (utf-8), rank, dims[rank], values (<f8, row-major) }
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ContractError

MAGIC = b"EIRCKPT1"


def dumps(named: Iterable[tuple[str, np.ndarray]]) -> bytes:
    items = list(named)
    chunks = [MAGIC, struct.pack("<I", len(items))]
    for name, values in items:
        arr = np.ascontiguousarray(values, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[: len(MAGIC)] != MAGIC:
        raise ContractError("not an EIR checkpoint (bad magic)")
    pos = len(MAGIC)

    def read(fmt: str):
        nonlocal pos
        vals = struct.unpack_from(fmt, blob, pos)
        pos += struct.calcsize(fmt)
        return vals

    (count,) = read("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = read("<I")
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = read("<I")
        dims = read(f"<{rank}I")
        n = int(np.prod(dims))
        out[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(dims).copy()
        pos += 8 * n
    if pos != len(blob):
        raise ContractError(f"trailing bytes in checkpoint ({len(blob) - pos})")
    return out


def save(path: str | Path, named: Iterable[tuple[str, np.ndarray]]) -> None:
    Path(path).write_bytes(dumps(named))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
