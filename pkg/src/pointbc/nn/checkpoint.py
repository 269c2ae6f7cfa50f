"""Bit-exact checkpoint serialization.

Layout: a magic line, a little-endian uint32 header length, a UTF-8
JSON header, then the raw array buffers concatenated in header order.
Arrays are stored little-endian and C-contiguous, so a save/load
round-trip reproduces every buffer bitwise on any host.  Writes go
through a temp file and an atomic rename.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .optim import Adam, ParameterStore

MAGIC = b"PBC1\n"

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "int32": "<i4"}


def _le(arr: np.ndarray) -> np.ndarray:
    code = _DTYPES[arr.dtype.name]
    return np.ascontiguousarray(arr, dtype=np.dtype(code))


def write_arrays(path: str, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write named arrays plus a JSON metadata block atomically."""
    entries = []
    bufs = []
    for name, arr in arrays.items():
        arr = _le(arr)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name})
        bufs.append(arr.tobytes())
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode()

    out_dir = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".tmp_ckpt_")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", len(header)))
            f.write(header)
            for buf in bufs:
                f.write(buf)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def read_arrays(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        arrays: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            dt = np.dtype(_DTYPES[entry["dtype"]])
            n = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
            buf = f.read(n * dt.itemsize)
            if len(buf) != n * dt.itemsize:
                raise ValueError(f"{path} is truncated")
            arr = np.frombuffer(buf, dtype=dt).reshape(entry["shape"])
            arrays[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return arrays, header["meta"]


def save_store(
    path: str, store: ParameterStore, optimizer: Adam | None = None, meta: dict | None = None
) -> None:
    """Checkpoint parameters (and optionally optimizer state) to one file."""
    arrays: dict[str, np.ndarray] = {}
    for name, t in store.items():
        arrays[f"p:{name}"] = t.data
    full_meta = dict(meta or {})
    full_meta["dtype"] = store.dtype.name
    full_meta["param_names"] = store.names()
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
        full_meta["optimizer"] = {
            "step_count": optimizer.step_count,
            "lr": optimizer.lr,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "clip_norm": optimizer.clip_norm,
        }
    write_arrays(path, arrays, full_meta)


def load_store(path: str, store: ParameterStore, optimizer: Adam | None = None) -> dict:
    """Restore parameters (and optimizer state if present) in place.

    The store must already hold parameters with matching names and
    shapes; this keeps loading honest about architecture mismatches.
    Returns the metadata block.
    """
    arrays, meta = read_arrays(path)
    if meta.get("dtype") != store.dtype.name:
        raise ValueError(
            f"checkpoint dtype {meta.get('dtype')} does not match store {store.dtype.name}"
        )
    if meta.get("param_names") != store.names():
        raise ValueError("checkpoint parameter names do not match this model")
    store.load_snapshot({name: arrays[f"p:{name}"] for name in store.names()})
    if optimizer is not None and "optimizer" in meta:
        opt_meta = meta["optimizer"]
        optimizer.load_state_arrays(
            {k: v for k, v in arrays.items() if k[:2] in ("m:", "v:")},
            opt_meta["step_count"],
        )
    return meta
