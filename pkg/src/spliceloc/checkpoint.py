"""Deterministic checkpoint container.

Layout: magic ``SPLCKPT1``, a little-endian uint64 header length, a canonical
JSON header, then the raw tensor/array blobs concatenated in traversal
order. The header holds the full structure (config, counters, RNG states,
model and optimizer state) with tensors replaced by blob references, so a
checkpoint written from the same state is byte-identical and the format is
loadable from any language with JSON and raw-buffer support.

Encoded markers inside the header (objects with a ``__kind__`` key):
``tensor``/``ndarray`` (dtype, shape, blob index), ``tuple`` (items),
``bytes`` (hex), and ``map`` (key/value pairs whose keys are not strings).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"SPLCKPT1"

_TORCH_DTYPES = {
    "float16": torch.float16,
    "float32": torch.float32,
    "float64": torch.float64,
    "int8": torch.int8,
    "int16": torch.int16,
    "int32": torch.int32,
    "int64": torch.int64,
    "uint8": torch.uint8,
    "bool": torch.bool,
}


def _encode(obj, blobs: list[bytes]):
    if isinstance(obj, torch.Tensor):
        arr = obj.detach().cpu().contiguous().numpy()
        blobs.append(arr.tobytes())
        return {
            "__kind__": "tensor",
            "dtype": str(obj.dtype).removeprefix("torch."),
            "shape": list(obj.shape),
            "blob": len(blobs) - 1,
        }
    if isinstance(obj, np.ndarray):
        arr = np.ascontiguousarray(obj)
        blobs.append(arr.tobytes())
        return {
            "__kind__": "ndarray",
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "blob": len(blobs) - 1,
        }
    if isinstance(obj, (bytes, bytearray)):
        return {"__kind__": "bytes", "hex": bytes(obj).hex()}
    if isinstance(obj, tuple):
        return {"__kind__": "tuple", "items": [_encode(v, blobs) for v in obj]}
    if isinstance(obj, list):
        return [_encode(v, blobs) for v in obj]
    if isinstance(obj, dict):
        if all(isinstance(k, str) for k in obj) and "__kind__" not in obj:
            # Sorted traversal keeps blob order canonical: the header JSON is
            # written with sorted keys, so a decoded-and-re-encoded payload
            # must assign blob indices in the same order.
            return {k: _encode(obj[k], blobs) for k in sorted(obj)}
        return {
            "__kind__": "map",
            "items": [[_encode(k, blobs), _encode(v, blobs)] for k, v in obj.items()],
        }
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    raise TypeError(f"cannot serialize object of type {type(obj)!r}")


def _decode(obj, blobs: list[bytes]):
    if isinstance(obj, list):
        return [_decode(v, blobs) for v in obj]
    if isinstance(obj, dict):
        kind = obj.get("__kind__")
        if kind is None:
            return {k: _decode(v, blobs) for k, v in obj.items()}
        if kind == "tensor":
            if obj["dtype"] not in _TORCH_DTYPES:
                raise ValueError(f"unsupported tensor dtype {obj['dtype']!r}")
            arr = np.frombuffer(blobs[obj["blob"]], dtype=np.dtype(obj["dtype"]))
            return torch.from_numpy(arr.reshape(obj["shape"]).copy())
        if kind == "ndarray":
            arr = np.frombuffer(blobs[obj["blob"]], dtype=np.dtype(obj["dtype"]))
            return arr.reshape(obj["shape"]).copy()
        if kind == "bytes":
            return bytes.fromhex(obj["hex"])
        if kind == "tuple":
            return tuple(_decode(v, blobs) for v in obj["items"])
        if kind == "map":
            return { _decode(k, blobs): _decode(v, blobs) for k, v in obj["items"] }
        raise ValueError(f"unknown encoded kind {kind!r}")
    return obj


def dumps(payload: dict) -> bytes:
    blobs: list[bytes] = []
    encoded = _encode(payload, blobs)
    header = {
        "format": "spliceloc-checkpoint",
        "version": 1,
        "blob_sizes": [len(b) for b in blobs],
        "payload": encoded,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":"),
                              allow_nan=False).encode()
    return MAGIC + struct.pack("<Q", len(header_bytes)) + header_bytes + b"".join(blobs)


def loads(raw: bytes) -> dict:
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError("not a spliceloc checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[len(MAGIC): len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(raw[start: start + hlen].decode())
    if header.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
    blobs = []
    offset = start + hlen
    for size in header["blob_sizes"]:
        blobs.append(raw[offset: offset + size])
        offset += size
    return _decode(header["payload"], blobs)


def save(path: Path | str, payload: dict) -> None:
    data = dumps(payload)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def load(path: Path | str) -> dict:
    return loads(Path(path).read_bytes())
