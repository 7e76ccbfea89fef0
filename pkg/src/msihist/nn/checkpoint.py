"""Binary checkpoint files.

Layout (all integers little-endian):

    magic   4 bytes  b"MSIH"
    version u32      format version (1)
    json    u32 length + UTF-8 payload: model kind, config echo, step,
                     rng seed, and arbitrary training metadata
    records u32 count, then per record:
                     u16 name length + UTF-8 name
                     u8 ndim, ndim * u32 dims
                     float64 little-endian data

Parameter records use their registry names; Adam moments are stored as
"adam.m.<name>" / "adam.v.<name>". Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DataFormatError
from .optim import TrainState
from .tensor import Tensor

MAGIC = b"MSIH"
VERSION = 1


def _write_record(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_record(fh) -> tuple[str, np.ndarray]:
    raw = fh.read(2)
    if len(raw) != 2:
        raise DataFormatError("truncated checkpoint record header")
    (name_len,) = struct.unpack("<H", raw)
    name = fh.read(name_len).decode("utf-8")
    (ndim,) = struct.unpack("<B", fh.read(1))
    dims = [struct.unpack("<I", fh.read(4))[0] for _ in range(ndim)]
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    data = np.frombuffer(fh.read(count * 8), dtype="<f8")
    if data.size != count:
        raise DataFormatError(f"truncated checkpoint data for record {name}")
    return name, data.reshape(dims).astype(np.float64)


def save_checkpoint(path: str | Path, kind: str, config: dict,
                    state: TrainState, meta: dict | None = None) -> None:
    """Write parameters, Adam moments, step count and config echo."""
    header = {
        "kind": kind,
        "config": config,
        "step": state.step,
        "rng_seed": state.rng_seed,
        "meta": meta or {},
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        names = list(state.params)
        fh.write(struct.pack("<I", 3 * len(names)))
        for name in names:
            _write_record(fh, name, state.params[name].data)
        for name in names:
            _write_record(fh, f"adam.m.{name}", state.m[name])
        for name in names:
            _write_record(fh, f"adam.v.{name}", state.v[name])


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray],
                                               dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Return (header, params, adam_m, adam_v)."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise DataFormatError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
        (json_len,) = struct.unpack("<I", fh.read(4))
        try:
            header = json.loads(fh.read(json_len).decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise DataFormatError(f"{path}: corrupt checkpoint header: {e}") from e
        (n_records,) = struct.unpack("<I", fh.read(4))
        params: dict[str, np.ndarray] = {}
        adam_m: dict[str, np.ndarray] = {}
        adam_v: dict[str, np.ndarray] = {}
        for _ in range(n_records):
            name, arr = _read_record(fh)
            if name.startswith("adam.m."):
                adam_m[name[len("adam.m."):]] = arr
            elif name.startswith("adam.v."):
                adam_v[name[len("adam.v."):]] = arr
            else:
                params[name] = arr
    return header, params, adam_m, adam_v


def restore_state(params: dict[str, Tensor], loaded: tuple) -> TrainState:
    """Build a TrainState for `params` from :func:`load_checkpoint` output."""
    header, values, adam_m, adam_v = loaded
    names = set(params)
    if set(values) != names or set(adam_m) != names or set(adam_v) != names:
        raise DataFormatError("checkpoint parameter names do not match the model")
    for name, p in params.items():
        if values[name].shape != p.data.shape:
            raise DataFormatError(
                f"checkpoint parameter {name} shape {values[name].shape} "
                f"!= model shape {p.data.shape}"
            )
        p.data = values[name].copy()
    state = TrainState(params=params,
                       m={k: v.copy() for k, v in adam_m.items()},
                       v={k: v.copy() for k, v in adam_v.items()},
                       step=int(header["step"]),
                       rng_seed=int(header["rng_seed"]))
    state.validate()
    return state
