"""Self-describing checkpoint archive.

Layout (see ``docs/checkpoint-format.md``)::

    AMPGNN-CHECKPOINT\\n
    version 1\\n
    hyper {"L": 2, "T": 10, "n_h1": 16, "n_h2": 8, "n_out": 2, "n_u": 8}\\n
    meta {...}\\n
    tensor <name> <d0,d1,...> <byte offset>\\n      (one line per tensor)
    end <payload bytes>\\n
    <payload: row-major little-endian float64, tensors back to back>

JSON blocks are written with sorted keys so save/load/save is byte-exact.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mpnn import MpnnParams, param_shapes

MAGIC = "AMPGNN-CHECKPOINT"
VERSION = 1
_DTYPE = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: MpnnParams
    T: int = 10
    L: int = 2
    meta: dict = field(default_factory=dict)
    extra: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    @property
    def hyper(self) -> dict:
        p = self.params
        return {"n_u": p.n_u, "n_h1": p.n_h1, "n_h2": p.n_h2, "n_out": p.n_out, "T": self.T, "L": self.L}


def to_bytes(ckpt: Checkpoint) -> bytes:
    tensors = list(ckpt.params.tensors.items()) + list(ckpt.extra.items())
    lines = [MAGIC, f"version {VERSION}",
             "hyper " + json.dumps(ckpt.hyper, sort_keys=True),
             "meta " + json.dumps(ckpt.meta, sort_keys=True)]
    offset = 0
    chunks = []
    for name, arr in tensors:
        if " " in name:
            raise CheckpointError(f"tensor name {name!r} contains a space")
        arr = np.ascontiguousarray(arr, dtype=_DTYPE)
        shape = ",".join(str(d) for d in arr.shape)
        lines.append(f"tensor {name} {shape} {offset}")
        raw = arr.tobytes(order="C")
        chunks.append(raw)
        offset += len(raw)
    lines.append(f"end {offset}")
    return ("\n".join(lines) + "\n").encode("utf-8") + b"".join(chunks)


def from_bytes(data: bytes) -> Checkpoint:
    lines = []
    pos = 0
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise CheckpointError("truncated header")
        try:
            line = data[pos:nl].decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError("corrupt header") from None
        pos = nl + 1
        lines.append(line)
        if line.startswith("end "):
            break
        if len(lines) == 1 and line != MAGIC:
            raise CheckpointError("not a checkpoint file")
    payload = data[pos:]
    try:
        version = int(lines[1].split(" ", 1)[1])
        if not lines[1].startswith("version "):
            raise ValueError
    except (IndexError, ValueError):
        raise CheckpointError("corrupt header: missing version") from None
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}; expected {VERSION}")
    try:
        hyper = json.loads(_field(lines[2], "hyper"))
        meta = json.loads(_field(lines[3], "meta"))
        declared = int(_field(lines[-1], "end"))
    except (IndexError, ValueError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from None
    if len(payload) != declared:
        raise CheckpointError(f"payload has {len(payload)} bytes, header declares {declared}")

    tensors = OrderedDict()
    expected_offset = 0
    for line in lines[4:-1]:
        parts = line.split(" ")
        if len(parts) != 4 or parts[0] != "tensor":
            raise CheckpointError(f"corrupt tensor entry: {line!r}")
        _, name, shape_s, off_s = parts
        shape = tuple(int(d) for d in shape_s.split(",")) if shape_s else ()
        offset = int(off_s)
        if offset != expected_offset:
            raise CheckpointError(f"{name}: offset {offset}, expected {expected_offset}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{name}: data runs past end of payload")
        tensors[name] = np.frombuffer(payload, dtype=_DTYPE, count=nbytes // 8, offset=offset).reshape(shape).copy()
        expected_offset += nbytes
    if expected_offset != declared:
        raise CheckpointError("tensor directory does not cover the payload")

    try:
        sizes = {k: int(hyper[k]) for k in ("n_u", "n_h1", "n_h2", "n_out")}
        T, L = int(hyper["T"]), int(hyper["L"])
    except (KeyError, TypeError, ValueError):
        raise CheckpointError("hyperparameter block incomplete") from None
    shapes = param_shapes(**sizes)
    params = OrderedDict()
    for name, shape in shapes.items():
        if name not in tensors:
            raise CheckpointError(f"missing tensor {name}")
        if tensors[name].shape != shape:
            raise CheckpointError(f"{name}: stored shape {tensors[name].shape}, expected {shape}")
        params[name] = tensors.pop(name)
    mp = MpnnParams(params, **sizes)
    try:
        mp.check()
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
    return Checkpoint(params=mp, T=T, L=L, meta=meta, extra=tensors)


def _field(line: str, key: str) -> str:
    if not line.startswith(key + " "):
        raise ValueError(f"expected '{key}' line")
    return line[len(key) + 1:]


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
