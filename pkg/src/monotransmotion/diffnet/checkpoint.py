"""Single-file checkpoints.

Layout::

    b"MTCKPT01"                      8-byte magic
    uint64 little-endian             manifest length in bytes
    manifest                         UTF-8 JSON, sorted keys
    payload                          little-endian float64 arrays, back to back

The manifest lists every parameter (name, shape, offset in float64 units)
together with its Adam moments and step count, the optimiser step counter,
a config hash and an optional RNG state.  Serialisation has no timestamps,
so identical training runs give byte-identical files.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .nn import ParameterStore

MAGIC = b"MTCKPT01"


class CheckpointError(ValueError):
    pass


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def dumps(store: ParameterStore, config: dict | None = None, rng_state: dict | None = None,
          extra: dict | None = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name in store.names():
        for kind, arr in (("param", store[name].data), ("m", store.m[name]), ("v", store.v[name])):
            a = np.ascontiguousarray(arr, dtype="<f8")
            entries.append({"name": name, "kind": kind, "shape": list(a.shape), "offset": offset})
            chunks.append(a.tobytes())
            offset += a.size
    manifest = {
        "format": 1,
        "entries": entries,
        "steps": {n: store.t[n] for n in store.names()},
        "optimizer_step": store.step,
        "config": config or {},
        "config_hash": config_hash(config or {}),
        "rng_state": rng_state,
        "extra": extra or {},
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(mbytes)) + mbytes + b"".join(chunks)


def loads(blob: bytes) -> tuple[ParameterStore, dict]:
    """Return the parameter store and the manifest."""
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", blob[8:16])
    try:
        manifest = json.loads(blob[16:16 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from None
    payload = np.frombuffer(blob[16 + n:], dtype="<f8")
    store = ParameterStore(step=int(manifest["optimizer_step"]))
    arrays: dict[tuple[str, str], np.ndarray] = {}
    for e in manifest["entries"]:
        size = int(np.prod(e["shape"], dtype=np.int64))
        if e["offset"] + size > payload.size:
            raise CheckpointError(f"payload truncated at {e['name']}/{e['kind']}")
        arrays[(e["name"], e["kind"])] = payload[e["offset"]:e["offset"] + size].reshape(e["shape"]).astype(np.float64)
    for name, steps in manifest["steps"].items():
        store.add(name, arrays[(name, "param")])
        store.m[name] = arrays[(name, "m")]
        store.v[name] = arrays[(name, "v")]
        store.t[name] = int(steps)
    return store, manifest


def save(path, store: ParameterStore, config: dict | None = None, rng_state: dict | None = None,
         extra: dict | None = None) -> None:
    Path(path).write_bytes(dumps(store, config, rng_state, extra))


def load(path) -> tuple[ParameterStore, dict]:
    return loads(Path(path).read_bytes())
