"""Named-parameter flat checkpoint file.

Layout (little-endian):

    magic "RDCP" | u32 version | u32 config_len | config JSON (utf-8)
    u32 param_count
    per parameter, in store order:
        u32 name_len | name utf-8 | u32 rank | rank * u32 dims | float32 data

Round-trips are bit-exact: values are stored as the float32 they are.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ConfigurationError, DataError, DimensionError
from .tensor import ParamStore

MAGIC = b"RDCP"
VERSION = 1


def save_checkpoint(path, config: dict, store: ParamStore):
    cfg_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(cfg_bytes))
    blob += cfg_bytes
    blob += struct.pack("<I", len(store))
    for name, tensor in store.items():
        name_b = name.encode("utf-8")
        arr = tensor.data
        blob += struct.pack("<I", len(name_b)) + name_b
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.astype("<f4", copy=False).tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError as exc:
        raise DataError(f"checkpoint not found: {path}") from exc
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise DataError(f"not a checkpoint file: {path}")
    version, cfg_len = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    pos = 12
    config = json.loads(blob[pos:pos + cfg_len].decode("utf-8"))
    pos += cfg_len
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).copy().reshape(shape)
        pos += 4 * n
        params[name] = arr
    return config, params


def load_into_store(path, store: ParamStore) -> dict:
    """Load a checkpoint into an already-built store; returns the stored config."""
    config, params = load_checkpoint(path)
    try:
        store.load_state(params)
    except DimensionError as exc:
        raise ConfigurationError(f"checkpoint {path} does not match model: {exc}") from exc
    return config
