"""Binary checkpoint format.

Layout, all little-endian::

    bytes 0..3   magic b"COAD"
    byte  4      format version (currently 1)
    bytes 5..8   uint32 header length in bytes
    header       UTF-8 JSON: {"config": {...}, "tensors": [{"name", "shape", "dtype"}, ...]}
    payload      raw tensor buffers, concatenated in header order

The config object is an opaque echo of whatever produced the checkpoint and is
validated by the consumer, not here. Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"COAD"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray], config: dict) -> None:
    path = Path(path)
    names = list(params)
    header = {
        "config": config,
        "tensors": [
            {"name": n, "shape": list(params[n].shape), "dtype": str(params[n].dtype)}
            for n in names
        ],
    }
    header_bytes = json.dumps(header).encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<B", VERSION))
            fh.write(struct.pack("<I", len(header_bytes)))
            fh.write(header_bytes)
            for n in names:
                arr = np.ascontiguousarray(params[n])
                fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version = blob[4]
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack("<I", blob[5:9])
    header = json.loads(blob[9 : 9 + header_len].decode("utf-8"))
    offset = 9 + header_len
    params: dict[str, np.ndarray] = {}
    for spec in header["tensors"]:
        dtype = np.dtype(spec["dtype"]).newbyteorder("<")
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated payload at tensor {spec['name']!r}")
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset).reshape(shape)
        params[spec["name"]] = arr.astype(dtype.newbyteorder("="))
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return params, header["config"]
