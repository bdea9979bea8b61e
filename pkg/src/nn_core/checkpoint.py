"""Flat binary checkpoints.

Layout: the magic bytes ``MISME1``, one version byte, a little-endian uint32
record count, then per record: uint32 name length, UTF-8 name, uint32 rank,
rank x uint32 dims, and the values as little-endian float64.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from common.errors import InputError, MissingInputError

MAGIC = b"MISME1"
VERSION = 1


def save_checkpoint(state: Mapping[str, np.ndarray], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<B", VERSION), struct.pack("<I", len(state))]
    for name in sorted(state):
        values = np.asarray(state[name], dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", values.ndim))
        chunks.append(struct.pack(f"<{values.ndim}I", *values.shape))
        chunks.append(values.tobytes())
    path.write_bytes(b"".join(chunks))
    return path


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"Checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise InputError(f"{path} is not a checkpoint (bad magic)")
    offset = len(MAGIC)
    (version,) = struct.unpack_from("<B", blob, offset)
    if version != VERSION:
        raise InputError(f"Unsupported checkpoint version {version} in {path}")
    offset += 1
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4

    state: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            n_values = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(blob, dtype="<f8", count=n_values, offset=offset)
            offset += 8 * n_values
            state[name] = values.astype(np.float64).reshape(dims)
    except (struct.error, ValueError) as e:
        raise InputError(f"Truncated or corrupt checkpoint {path}: {e}") from e
    return state
