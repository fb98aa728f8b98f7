"""Binary checkpoints: store census, alias table, raw float32 payloads.

Layout (all integers little-endian):

    magic  b"WFN1"
    u32    number of physical tensors
    per tensor, in store insertion order:
        u16 name length, utf-8 canonical name
        u8  dtype code (0 = float32)
        u8  rank
        u32 * rank  dims
    u32    number of aliases
    per alias, in registration order:
        u16 + utf-8 logical site, u16 + utf-8 canonical name
    payloads: row-major little-endian float32, in header order

Aliased tensors appear once; the alias table is metadata only. A model
checkpoint also writes a '<path>.config.json' sidecar so the exact model
can be rebuilt before the bytes are restored.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .config import ModelConfig
from .errors import DataError
from .store import ParamStore
from .tensor import Tensor

MAGIC = b"WFN1"
DTYPE_F32 = 0


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise DataError(f"name too long: {s[:40]}...")
    return struct.pack("<H", len(raw)) + raw


def _read_str(buf: bytes, at: int) -> tuple[str, int]:
    (n,) = struct.unpack_from("<H", buf, at)
    at += 2
    return buf[at : at + n].decode("utf-8"), at + n


def checkpoint_bytes(store: ParamStore) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(store.physical))]
    for name, tensor in store.physical.items():
        parts.append(_pack_str(name))
        parts.append(struct.pack("<BB", DTYPE_F32, tensor.data.ndim))
        parts.append(struct.pack(f"<{tensor.data.ndim}I", *tensor.data.shape))
    parts.append(struct.pack("<I", len(store.aliases)))
    for logical, canonical in store.aliases.items():
        parts.append(_pack_str(logical))
        parts.append(_pack_str(canonical))
    for tensor in store.physical.values():
        parts.append(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(store: ParamStore, path: str) -> int:
    blob = checkpoint_bytes(store)
    with open(path, "wb") as f:
        f.write(blob)
    return len(blob)


def load_checkpoint(path: str) -> ParamStore:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise DataError(f"{path}: bad magic {buf[:4]!r}")
    at = 4
    try:
        (n_phys,) = struct.unpack_from("<I", buf, at)
        at += 4
        headers = []
        for _ in range(n_phys):
            name, at = _read_str(buf, at)
            dtype, rank = struct.unpack_from("<BB", buf, at)
            at += 2
            if dtype != DTYPE_F32:
                raise DataError(f"{path}: unsupported dtype code {dtype}")
            shape = struct.unpack_from(f"<{rank}I", buf, at)
            at += 4 * rank
            headers.append((name, shape))
        (n_alias,) = struct.unpack_from("<I", buf, at)
        at += 4
        aliases = []
        for _ in range(n_alias):
            logical, at = _read_str(buf, at)
            canonical, at = _read_str(buf, at)
            aliases.append((logical, canonical))
    except (struct.error, UnicodeDecodeError) as e:
        raise DataError(f"{path}: corrupt header ({e})")
    payload = sum(4 * int(np.prod(shape)) if shape else 4 for _, shape in headers)
    if len(buf) - at != payload:
        raise DataError(f"{path}: payload is {len(buf) - at} bytes, header says {payload}")
    store = ParamStore()
    for name, shape in headers:
        count = int(np.prod(shape)) if shape else 1
        flat = np.frombuffer(buf, dtype="<f4", count=count, offset=at)
        at += 4 * count
        store.add(name, Tensor(flat.reshape(shape).astype(np.float32)))
    for logical, canonical in aliases:
        store.bind(logical, canonical)
    return store


def restore_into(store: ParamStore, model_store: ParamStore):
    """Copy loaded payloads into an existing store's tensors, in place.

    In-place copy keeps every block's Tensor references (and tying) intact.
    """
    loaded = store.physical
    target = model_store.physical
    if set(loaded) != set(target):
        missing = sorted(set(target) - set(loaded))
        extra = sorted(set(loaded) - set(target))
        raise DataError(f"checkpoint/model mismatch; missing {missing}, extra {extra}")
    for name, tensor in target.items():
        src = loaded[name].data
        if src.shape != tensor.data.shape:
            raise DataError(f"{name}: checkpoint shape {src.shape} vs model {tensor.data.shape}")
        tensor.data[...] = src


def sidecar_path(path: str) -> str:
    return path + ".config.json"


def save_model_checkpoint(model, path: str) -> int:
    n = save_checkpoint(model.store, path)
    with open(sidecar_path(path), "w", encoding="utf-8") as f:
        json.dump(model.config.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    return n


def load_model_checkpoint(path: str, config: ModelConfig | None = None):
    """Rebuild the model (from the sidecar unless a config is given) and
    restore its exact parameter bytes."""
    from .transformer import build_model

    if config is None:
        try:
            with open(sidecar_path(path), encoding="utf-8") as f:
                config = ModelConfig.from_dict(json.load(f))
        except FileNotFoundError:
            raise DataError(f"no config sidecar next to {path}; pass one explicitly")
    model = build_model(config, seed=0)
    loaded = load_checkpoint(path)
    restore_into(loaded, model.store)
    return model
