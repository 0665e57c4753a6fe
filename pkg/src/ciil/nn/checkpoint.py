"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"CIILCKPT"            8-byte magic
    uint32                 format version
    uint32                 header length H
    H bytes                UTF-8 JSON header
    blobs                  parameters, BN buffers, Adam m, Adam v in header order
    uint32                 CRC32 of everything above

Blob dtype is recorded in the header ("<f4" for float32 models, "<f8" for
float64 models) so the round trip is bit-exact either way.
"""

from __future__ import annotations

import json
import os
import struct
import zlib

import numpy as np

from ..errors import CheckpointError, CheckpointShapeError
from .model import BUFFER_ORDER, PARAM_ORDER, ModelConfig, ModelState
from .optim import AdamState

MAGIC = b"CIILCKPT"
FORMAT_VERSION = 1


def _tensor_table(model: ModelState, opt: AdamState | None):
    table = [("param", n, model.params[n]) for n in PARAM_ORDER]
    table += [("buffer", n, model.buffers[n]) for n in BUFFER_ORDER]
    if opt is not None and opt.m:
        table += [("adam_m", n, opt.m[n]) for n in PARAM_ORDER]
        table += [("adam_v", n, opt.v[n]) for n in PARAM_ORDER]
    return table


def to_bytes(model: ModelState, opt: AdamState | None = None) -> bytes:
    blob_dtype = np.dtype(model.config.dtype).newbyteorder("<")
    table = _tensor_table(model, opt)
    header = {
        "config": model.config.to_dict(),
        "version": model.version,
        "lineage": model.lineage,
        "dtype": blob_dtype.str,
        "adam_step": None if opt is None or not opt.m else opt.step,
        "tensors": [{"kind": k, "name": n, "shape": list(a.shape)} for k, n, a in table],
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    body = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(hbytes)), hbytes]
    body += [np.ascontiguousarray(a, dtype=blob_dtype).tobytes() for _, _, a in table]
    payload = b"".join(body)
    return payload + struct.pack("<I", zlib.crc32(payload))


def save_checkpoint(model: ModelState, opt: AdamState | None, path) -> None:
    data = to_bytes(model, opt)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def from_bytes(data: bytes, expect_config: ModelConfig | None = None):
    if len(data) < len(MAGIC) + 12 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic or truncated)")
    payload, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(payload) != crc:
        raise CheckpointError("checksum mismatch: file truncated or corrupt")
    fmt, hlen = struct.unpack_from("<II", payload, len(MAGIC))
    if fmt != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {fmt}")
    start = len(MAGIC) + 8
    try:
        header = json.loads(payload[start : start + hlen].decode())
        cfg = ModelConfig(**header["config"])
        blob_dtype = np.dtype(header["dtype"])
        tensors = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from exc

    if expect_config is not None and cfg != expect_config:
        diff = {
            k: (v, getattr(expect_config, k))
            for k, v in cfg.to_dict().items()
            if getattr(expect_config, k) != v
        }
        raise CheckpointShapeError(f"checkpoint config differs from expected: {diff}")
    expected = {("param", n): s for n, s in cfg.param_shapes().items()}
    expected.update({("buffer", n): s for n, s in cfg.buffer_shapes().items()})
    for name, shape in cfg.param_shapes().items():
        expected[("adam_m", name)] = shape
        expected[("adam_v", name)] = shape

    arrays: dict[tuple[str, str], np.ndarray] = {}
    offset = start + hlen
    for entry in tensors:
        key = (entry["kind"], entry["name"])
        shape = tuple(entry["shape"])
        if key not in expected:
            raise CheckpointError(f"unexpected tensor {key}")
        if expected[key] != shape:
            raise CheckpointShapeError(
                f"{entry['name']}: header shape {shape} vs config shape {expected[key]}"
            )
        nbytes = int(np.prod(shape)) * blob_dtype.itemsize
        if offset + nbytes > len(payload):
            raise CheckpointError("checkpoint truncated inside tensor data")
        arr = np.frombuffer(payload, dtype=blob_dtype, count=int(np.prod(shape)), offset=offset)
        arrays[key] = arr.reshape(shape).astype(cfg.dtype)
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError("trailing bytes after tensor data")
    for n in PARAM_ORDER:
        if ("param", n) not in arrays:
            raise CheckpointError(f"missing parameter {n}")
    for n in BUFFER_ORDER:
        if ("buffer", n) not in arrays:
            raise CheckpointError(f"missing buffer {n}")

    model = ModelState(
        cfg,
        {n: arrays[("param", n)] for n in PARAM_ORDER},
        {n: arrays[("buffer", n)] for n in BUFFER_ORDER},
        version=int(header["version"]),
        mode="eval",
        lineage=header.get("lineage", []),
    )
    opt = None
    if header.get("adam_step") is not None:
        opt = AdamState(
            int(header["adam_step"]),
            {n: arrays[("adam_m", n)] for n in PARAM_ORDER},
            {n: arrays[("adam_v", n)] for n in PARAM_ORDER},
        )
    return model, opt


def load_checkpoint(path, expect_config: ModelConfig | None = None):
    """Returns ``(ModelState, AdamState | None)``; never returns partial state."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(data, expect_config)
