"""Flat binary parameter container.

Layout (all integers little-endian uint32):

    magic        4 bytes, b"PNCK"
    version      uint32, currently 1
    config_len   uint32
    config       config_len bytes, UTF-8 JSON object (training config echo)
    n_entries    uint32
    entry        repeated n_entries times, sorted by parameter name:
        name_len   uint32
        name       name_len bytes, UTF-8
        ndim       uint32
        shape      ndim uint32 values
        data       prod(shape) little-endian float64 values

Entries are written in sorted-name order, so saving the same parameters
twice produces byte-identical files.  The format carries no framework
state beyond the arrays and the config echo and is stable across versions:
readers must reject a magic or version they do not know.
"""

from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np

MAGIC = b"PNCK"
VERSION = 1


def _config_dict(config) -> dict:
    if config is None:
        return {}
    if dataclasses.is_dataclass(config):
        return dataclasses.asdict(config)
    return dict(config)


def save_checkpoint(path, params: dict, config=None):
    """Write named parameter arrays plus a config echo.

    ``params`` maps names to tensors or arrays; values are stored as
    float64 regardless of input dtype.
    """
    blob = json.dumps(_config_dict(config), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION),
             struct.pack("<I", len(blob)), blob,
             struct.pack("<I", len(params))]
    for name in sorted(params):
        data = np.asarray(getattr(params[name], "data", params[name]),
                          dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.raw):
            raise ValueError("truncated checkpoint file")
        out = self.raw[self.pos:self.pos + count]
        self.pos += count
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint back as (named arrays, config dict)."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(4) != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version = reader.u32()
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    config = json.loads(reader.take(reader.u32()).decode("utf-8"))
    params: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        ndim = reader.u32()
        shape = struct.unpack(f"<{ndim}I", reader.take(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(reader.take(8 * count), dtype="<f8")
        params[name] = data.reshape(shape).astype(np.float64)
    if reader.pos != len(reader.raw):
        raise ValueError("trailing bytes after last checkpoint entry")
    return params, config


def restore_parameters(target: dict, loaded: dict[str, np.ndarray]):
    """Copy loaded arrays into live parameter tensors, name by name."""
    missing = sorted(set(target) - set(loaded))
    extra = sorted(set(loaded) - set(target))
    if missing or extra:
        raise ValueError(
            f"parameter names do not match: missing {missing}, "
            f"unexpected {extra}")
    for name, tensor in target.items():
        if tensor.data.shape != loaded[name].shape:
            raise ValueError(
                f"shape mismatch for {name!r}: {tensor.data.shape} vs "
                f"{loaded[name].shape}")
        tensor.data[...] = loaded[name]
