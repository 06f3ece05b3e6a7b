"""Binary checkpoint format shared by every saved model.

Layout (little-endian)::

    b"XEX2"  u16 version
    repeated: u16 name_len, name (utf-8), u8 rank, rank x u32 dims, f32 values

Frozen tensors are flagged by the ``frozen:`` name prefix.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import CheckpointVersionError, ContractError

MAGIC = b"XEX2"
VERSION = 1
FROZEN_PREFIX = "frozen:"


def encode(tensors: dict[str, np.ndarray], frozen: Iterable[str] = ()) -> bytes:
    frozen = set(frozen)
    unknown = frozen - set(tensors)
    if unknown:
        raise ContractError(f"frozen names not in tensors: {sorted(unknown)}")
    out = [MAGIC, struct.pack("<H", VERSION)]
    for name, arr in tensors.items():
        if name.startswith(FROZEN_PREFIX):
            raise ContractError(f"tensor name may not start with {FROZEN_PREFIX!r}: {name}")
        arr = np.asarray(arr)
        stored = (FROZEN_PREFIX + name if name in frozen else name).encode("utf-8")
        if len(stored) > 0xFFFF or arr.ndim > 0xFF:
            raise ContractError(f"tensor {name!r} cannot be encoded")
        out.append(struct.pack("<H", len(stored)))
        out.append(stored)
        out.append(struct.pack("<B", arr.ndim))
        out.append(np.asarray(arr.shape, dtype="<u4").tobytes())
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], set[str]]:
    if blob[:4] != MAGIC:
        raise CheckpointVersionError("not a checkpoint: bad magic bytes")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, this build reads {VERSION}")
    pos = 6
    tensors: dict[str, np.ndarray] = {}
    frozen: set[str] = set()
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = tuple(int(d) for d in np.frombuffer(blob, dtype="<u4", count=rank, offset=pos))
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(dims)
            pos += 4 * count
            if name.startswith(FROZEN_PREFIX):
                name = name[len(FROZEN_PREFIX):]
                frozen.add(name)
            tensors[name] = values.astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise CheckpointVersionError(f"truncated or corrupt checkpoint at byte {pos}") from exc
    return tensors, frozen


def save(path, tensors: dict[str, np.ndarray], frozen: Iterable[str] = ()):
    Path(path).write_bytes(encode(tensors, frozen))


def load(path) -> tuple[dict[str, np.ndarray], set[str]]:
    return decode(Path(path).read_bytes())
