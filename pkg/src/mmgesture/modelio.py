"""Flat parameter files: a text header of tensor names and shapes followed by
little-endian float32 data in header order.

    mmgesture-params 1
    meta kind backbone
    tensor conv1.w 8 3 3 3
    tensor conv1.b 8
    end
    <raw float32 bytes>
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = "mmgesture-params 1"


def dumps(params: Mapping[str, np.ndarray], meta: Mapping[str, str] | None = None) -> bytes:
    lines = [MAGIC]
    for k, v in (meta or {}).items():
        if any(ch.isspace() for ch in f"{k}{v}"):
            raise ValueError("meta keys and values must not contain whitespace")
        lines.append(f"meta {k} {v}")
    chunks = []
    for name, arr in params.items():
        if any(ch.isspace() for ch in name):
            raise ValueError(f"tensor name {name!r} contains whitespace")
        arr = np.asarray(arr)
        lines.append(" ".join(["tensor", name, *map(str, arr.shape)]))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    lines.append("end")
    return ("\n".join(lines) + "\n").encode("ascii") + b"".join(chunks)


def loads(data: bytes):
    """Return ``(params, meta)``; params are float64 arrays."""
    params, meta, specs = {}, {}, []
    pos = 0
    first = True
    while True:
        nl = data.index(b"\n", pos)
        line = data[pos:nl].decode("ascii")
        pos = nl + 1
        if first:
            if line != MAGIC:
                raise ValueError("not a parameter file")
            first = False
            continue
        if line == "end":
            break
        parts = line.split()
        if parts[0] == "meta":
            meta[parts[1]] = parts[2]
        elif parts[0] == "tensor":
            specs.append((parts[1], tuple(int(p) for p in parts[2:])))
        else:
            raise ValueError(f"bad header line {line!r}")
    for name, shape in specs:
        n = int(np.prod(shape, dtype=int))
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(shape)
        params[name] = arr.astype(np.float64)
        pos += 4 * n
    if pos != len(data):
        raise ValueError(f"{len(data) - pos} trailing bytes after tensor data")
    return params, meta


def save(path: str | Path, params: Mapping[str, np.ndarray], meta: Mapping[str, str] | None = None) -> None:
    Path(path).write_bytes(dumps(params, meta))


def load(path: str | Path):
    return loads(Path(path).read_bytes())
