"""Checkpoint serialization: JSON manifest plus raw little-endian blob.

Layout on disk:

    [u64 little-endian manifest byte length]
    [manifest JSON, utf-8]
    [tensor payload, concatenated raw bytes]

The manifest records format_version, model_type, the config snapshot,
the seed, and per-tensor name/shape/dtype/offset. Round trips are
bit-identical; loading rebuilds the model from its registered
constructor and overwrites the freshly initialized parameters.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import CorruptCheckpoint, VersionMismatch

FORMAT_VERSION = 1

_REGISTRY = {}


def register_model(name):
    """Class decorator mapping a manifest model_type to a constructor."""

    def wrap(cls):
        _REGISTRY[name] = cls
        cls.model_type = name
        return cls

    return wrap


def save_checkpoint(model, path):
    tensors = []
    chunks = []
    offset = 0
    seen = set()
    for name, param in model.named_parameters():
        if name in seen:
            raise CorruptCheckpoint(f"duplicate tensor name: {name}")
        seen.add(name)
        arr = np.ascontiguousarray(param.data)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        tensors.append({
            "name": name,
            "shape": list(param.data.shape),  # ascontiguousarray promotes 0-d
            "dtype": np.dtype(arr.dtype).str,
            "offset": offset,
        })
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_type": model.model_type,
        "config": model.config,
        "seed": model.seed,
        "payload_bytes": offset,
        "tensors": tensors,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for raw in chunks:
            fh.write(raw)


def read_manifest(path):
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) != 8:
            raise CorruptCheckpoint("missing manifest length header")
        (mlen,) = struct.unpack("<Q", head)
        blob = fh.read(mlen)
        if len(blob) != mlen:
            raise CorruptCheckpoint("truncated manifest")
        try:
            manifest = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptCheckpoint(f"manifest is not valid JSON: {exc}") from exc
        payload = fh.read()
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"format_version {version!r}, expected {FORMAT_VERSION}")
    if manifest.get("payload_bytes") != len(payload):
        raise CorruptCheckpoint(
            f"payload is {len(payload)} bytes, manifest says "
            f"{manifest.get('payload_bytes')}")
    return manifest, payload


def load_checkpoint(path):
    manifest, payload = read_manifest(path)
    model_type = manifest.get("model_type")
    if model_type not in _REGISTRY:
        # built-in model classes register on import; pull them in lazily so
        # loading works without the caller importing the defining module
        from .. import mae  # noqa: F401
        from ..tasks import s2t, slr, t2s  # noqa: F401
    if model_type not in _REGISTRY:
        raise CorruptCheckpoint(f"unknown model_type {model_type!r}")
    model = _REGISTRY[model_type].from_config(manifest["config"],
                                              manifest["seed"])
    params = dict(model.named_parameters())
    loaded = set()
    for entry in manifest["tensors"]:
        name = entry["name"]
        if name not in params:
            raise CorruptCheckpoint(f"tensor {name!r} has no matching parameter")
        shape = tuple(entry["shape"])
        dtype = np.dtype(entry["dtype"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        start = entry["offset"]
        raw = payload[start:start + nbytes]
        if len(raw) != nbytes:
            raise CorruptCheckpoint(f"tensor {name!r} payload truncated")
        arr = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        if params[name].data.shape != arr.shape:
            raise CorruptCheckpoint(
                f"tensor {name!r} shape {arr.shape} vs model "
                f"{params[name].data.shape}")
        params[name].data = arr
        loaded.add(name)
    missing = set(params) - loaded
    if missing:
        raise CorruptCheckpoint(f"missing tensors: {sorted(missing)}")
    model.eval()
    return model
