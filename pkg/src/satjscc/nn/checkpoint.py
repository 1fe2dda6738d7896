"""Checkpoint container.

Layout (all offsets in bytes)::

    b"SATJSCC-CKPT 1\\n"            magic line with format version
    b"<header_length>\\n"           decimal byte length of the header
    <header>                       UTF-8 JSON, sorted keys, including
                                   "params": [{"name", "shape"}, ...]
    <blocks>                       one little-endian float32 block per entry
                                   of "params", in that order, row-major

The JSON header additionally carries whatever topology, hyperparameter and
seed record the caller supplies.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .core import Layer

MAGIC = b"SATJSCC-CKPT"
VERSION = 1
_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def encode_checkpoint(layer: Layer, header: dict) -> bytes:
    params = list(layer.named_params())
    meta = dict(header)
    meta["params"] = [{"name": name, "shape": list(p.shape)} for name, p in params]
    text = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC + b" " + str(VERSION).encode() + b"\n", str(len(text)).encode() + b"\n", text]
    chunks += [np.ascontiguousarray(p.value, dtype=_DTYPE).tobytes() for _, p in params]
    return b"".join(chunks)


def save_checkpoint(path, layer: Layer, header: dict) -> None:
    """Write atomically (temp file + rename)."""
    data = encode_checkpoint(layer, header)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def decode_checkpoint(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        magic_line, rest = data.split(b"\n", 1)
        magic, version = magic_line.split(b" ")
        length_line, rest = rest.split(b"\n", 1)
        length = int(length_line)
    except ValueError:
        raise CheckpointError("not a checkpoint file") from None
    if magic != MAGIC:
        raise CheckpointError("bad magic")
    if int(version) != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {int(version)}")
    header = json.loads(rest[:length].decode("utf-8"))
    offset = length
    arrays = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * _DTYPE.itemsize
        if offset + nbytes > len(rest):
            raise CheckpointError(f"truncated block for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(rest, dtype=_DTYPE, count=count, offset=offset).reshape(shape)
        offset += nbytes
    if offset != len(rest):
        raise CheckpointError("trailing bytes after parameter blocks")
    return header, arrays


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def assign_params(layer: Layer, arrays: dict[str, np.ndarray]) -> None:
    named = dict(layer.named_params())
    if set(named) != set(arrays):
        missing = sorted(set(named) - set(arrays))
        extra = sorted(set(arrays) - set(named))
        raise CheckpointError(f"parameter mismatch: missing {missing}, unexpected {extra}")
    for name, p in named.items():
        if p.shape != arrays[name].shape:
            raise CheckpointError(f"shape mismatch for {name}: {p.shape} vs {arrays[name].shape}")
        p.value = arrays[name].astype(p.value.dtype, copy=True)
