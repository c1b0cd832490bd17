"""Binary checkpoint codec.

Layout: 4-byte magic "GKI1", 8-byte little-endian header length, a JSON
header (sorted keys) naming every array with its shape and group, then
the raw little-endian array payloads in exactly header order. Optimizer
moments ride along so resumed runs continue bit-for-bit.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import CheckpointError
from .optim import AdamState

__all__ = ["MAGIC", "Checkpoint", "save_checkpoint", "load_checkpoint"]

MAGIC = b"GKI1"
_HEADER_LEN_BYTES = 8


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    seed: int
    epoch: int
    step: int
    dtype: str
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def adam_state(self) -> AdamState:
        return AdamState(m=dict(self.adam_m), v=dict(self.adam_v), t=self.step)


def save_checkpoint(path,
                    params: dict[str, np.ndarray | Tensor],
                    *,
                    seed: int,
                    epoch: int,
                    step: int,
                    adam: AdamState | None = None,
                    meta: dict | None = None,
                    dtype: str = "<f8") -> None:
    arrays: list[tuple[str, str, np.ndarray]] = []
    for name in sorted(params):
        value = params[name]
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        arrays.append((name, "param", data))
    if adam is not None:
        for name in sorted(adam.m):
            arrays.append((name, "adam_m", adam.m[name]))
        for name in sorted(adam.v):
            arrays.append((name, "adam_v", adam.v[name]))
    header = {
        "arrays": [{"group": group, "name": name, "shape": list(a.shape)}
                   for name, group, a in arrays],
        "dtype": dtype,
        "epoch": int(epoch),
        "seed": int(seed),
        "step": int(step),
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(blob).to_bytes(_HEADER_LEN_BYTES, "little"))
        fh.write(blob)
        for _, _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype=np.dtype(dtype)).tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"bad magic in {path!s}: expected {MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < 4 + _HEADER_LEN_BYTES:
        raise CheckpointError(f"truncated checkpoint {path!s}: no header length")
    hlen = int.from_bytes(raw[4:4 + _HEADER_LEN_BYTES], "little")
    hstart = 4 + _HEADER_LEN_BYTES
    if len(raw) < hstart + hlen:
        raise CheckpointError(f"truncated checkpoint {path!s}: header cut short")
    try:
        header = json.loads(raw[hstart:hstart + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable checkpoint header in {path!s}: {e}") from e
    dtype = np.dtype(header["dtype"])
    offset = hstart + hlen
    ck = Checkpoint(params={}, seed=header["seed"], epoch=header["epoch"],
                    step=header["step"], dtype=header["dtype"], meta=header.get("meta", {}))
    groups = {"param": ck.params, "adam_m": ck.adam_m, "adam_v": ck.adam_v}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(raw):
            raise CheckpointError(
                f"truncated checkpoint {path!s}: array '{entry['name']}' cut short")
        a = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape).copy()
        groups[entry["group"]][entry["name"]] = a
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"trailing bytes in checkpoint {path!s}")
    return ck
