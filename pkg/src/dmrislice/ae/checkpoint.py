"""Checkpoint persistence.

File layout: 5-byte magic "DSAE1", a little-endian uint32 header length, a
JSON header holding the model config and the tensor manifest (names and
shapes, parameters first then batch-norm running statistics), followed by the
raw little-endian float32 tensor payloads in manifest order. Saving casts
float64 state to float32, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import IoError, ParseError
from .model import Autoencoder, config_from_dict, config_to_dict

MAGIC = b"DSAE1"


def _manifest(model: Autoencoder):
    return list(model.parameters()) + list(model.named_buffers())


def save_checkpoint(model: Autoencoder, path) -> None:
    tensors = _manifest(model)
    header = {
        "config": config_to_dict(model.cfg),
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for _, arr in tensors:
                fh.write(arr.astype("<f4").tobytes(order="C"))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_checkpoint(path) -> Autoencoder:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    if len(buf) < len(MAGIC) + 4:
        raise ParseError(f"{path}: truncated checkpoint", offset=len(buf))
    if buf[: len(MAGIC)] != MAGIC:
        raise ParseError(f"{path}: bad magic {buf[:len(MAGIC)]!r}", offset=0)
    (header_len,) = struct.unpack_from("<I", buf, len(MAGIC))
    header_end = len(MAGIC) + 4 + header_len
    if len(buf) < header_end:
        raise ParseError(f"{path}: truncated header", offset=len(buf))
    try:
        header = json.loads(buf[len(MAGIC) + 4 : header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: unreadable header: {exc}", offset=len(MAGIC) + 4) from exc

    model = Autoencoder(config_from_dict(header["config"]))
    tensors = _manifest(model)
    manifest = header["tensors"]
    if len(manifest) != len(tensors):
        raise ParseError(
            f"{path}: manifest lists {len(manifest)} tensors, model has {len(tensors)}"
        )
    offset = header_end
    for entry, (name, arr) in zip(manifest, tensors):
        shape = tuple(entry["shape"])
        if entry["name"] != name or shape != arr.shape:
            raise ParseError(
                f"{path}: tensor {entry['name']} {shape} does not match model "
                f"{name} {arr.shape}"
            )
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        if len(buf) < offset + nbytes:
            raise ParseError(f"{path}: truncated tensor data", offset=len(buf))
        values = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=offset)
        arr[...] = values.reshape(shape).astype(np.float64)
        offset += nbytes
    return model
