"""Checkpoint files: a text header, then raw little-endian float64 payloads.

Layout::

    DACER-CKPT 1
    <count>
    <name> <dim0>,<dim1>,...      (one line per tensor; scalars use an empty dim list "-")
    END
    <payload bytes, tensors concatenated in header order>
"""
from __future__ import annotations

import os
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import CheckpointError

MAGIC = "DACER-CKPT 1"


def save_checkpoint(path: str | os.PathLike, arrays: Mapping[str, np.ndarray]) -> None:
    lines = [MAGIC, str(len(arrays))]
    for name, arr in arrays.items():
        if not name or any(c.isspace() for c in name):
            raise CheckpointError(f"tensor name {name!r} must be non-empty without whitespace")
        dims = ",".join(str(d) for d in np.shape(arr)) or "-"
        lines.append(f"{name} {dims}")
    lines.append("END")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.readline().decode("ascii").strip() != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        count = int(fh.readline())
        header = []
        for _ in range(count):
            name, dims = fh.readline().decode("ascii").split()
            shape = () if dims == "-" else tuple(int(d) for d in dims.split(","))
            header.append((name, shape))
        if fh.readline().decode("ascii").strip() != "END":
            raise CheckpointError(f"{path}: malformed header")
        out = {}
        for name, shape in header:
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise CheckpointError(f"{path}: truncated payload for tensor {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
    return out


def restore_into(targets: Mapping[str, np.ndarray], loaded: Mapping[str, np.ndarray]) -> None:
    """Copy ``loaded`` values into the arrays of ``targets`` in place."""
    for name, dst in targets.items():
        if name not in loaded:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        src = loaded[name]
        if src.shape != dst.shape:
            raise CheckpointError(f"tensor {name!r}: checkpoint shape {src.shape} != expected {dst.shape}")
        dst[...] = src
