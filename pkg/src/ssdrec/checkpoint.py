"""Sectioned binary checkpoint container.

Each section is one ASCII header line followed by an optional raw payload::

    SSDREC-CHECKPOINT 1
    config <json>
    seed <int>
    tensor <name> <shape as d0,d1,...> <nbytes>
    <nbytes of little-endian float64, C order>
    ...
    end

Tensors are written in parameter order, so identical parameters give
identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SSDREC-CHECKPOINT 1\n"


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class Checkpoint:
    config: dict
    seed: int
    params: dict[str, np.ndarray]


def save_checkpoint(path, params: Mapping[str, np.ndarray], config: Mapping, seed: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC]
    chunks.append(b"config " + json.dumps(dict(config), sort_keys=True).encode() + b"\n")
    chunks.append(f"seed {int(seed)}\n".encode())
    for name, value in params.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        shape = ",".join(str(d) for d in arr.shape)
        payload = arr.tobytes()
        chunks.append(f"tensor {name} {shape} {len(payload)}\n".encode())
        chunks.append(payload)
    chunks.append(b"end\n")
    path.write_bytes(b"".join(chunks))
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: checkpoint not found")
    blob = path.read_bytes()
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    config: dict = {}
    seed = 0
    params: dict[str, np.ndarray] = {}
    while True:
        nl = blob.find(b"\n", pos)
        if nl < 0:
            raise CheckpointError(f"{path}: truncated header")
        header = blob[pos:nl].decode()
        pos = nl + 1
        kind, _, rest = header.partition(" ")
        if kind == "end":
            break
        if kind == "config":
            config = json.loads(rest)
        elif kind == "seed":
            seed = int(rest)
        elif kind == "tensor":
            name, shape_text, nbytes = rest.split(" ")
            shape = tuple(int(d) for d in shape_text.split(",")) if shape_text else ()
            n = int(nbytes)
            if pos + n > len(blob):
                raise CheckpointError(f"{path}: truncated tensor {name}")
            params[name] = np.frombuffer(blob[pos : pos + n], dtype="<f8").reshape(shape).astype(np.float64)
            pos += n
        else:
            raise CheckpointError(f"{path}: unknown section {kind!r}")
    return Checkpoint(config, seed, params)
