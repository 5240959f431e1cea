"""Binary tensor container ("DNCR") and training-state checkpoints.

Layout, all little-endian: magic ``DNCR``; u32 version; u32 tensor count;
per tensor a u16 name length, the UTF-8 name, u8 dtype code (0 = float32),
u8 rank, rank u32 dims and the row-major payload; finally a u32 CRC-32 of
every preceding byte.  JSON metadata travels as float32 tensors of byte
values under ``__meta__/<key>``.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from pathlib import Path
from typing import Mapping

import numpy as np
import torch
from torch import nn

MAGIC = b"DNCR"
VERSION = 1
DTYPE_CODES = {0: np.dtype("<f4")}
META_PREFIX = "__meta__/"


class ContainerError(ValueError):
    """Malformed, truncated or corrupted container."""


def encode_container(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            raise TypeError(f"tensor '{name}' has dtype {arr.dtype}; only float32 is stored")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:40]}...")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", 0, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_container(data: bytes) -> dict[str, np.ndarray]:
    if len(data) < 16 or data[:4] != MAGIC:
        raise ContainerError("not a DNCR container")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ContainerError("CRC mismatch: container is corrupted")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos : pos + n].decode("utf-8")
            pos += n
            code, rank = struct.unpack_from("<BB", body, pos)
            pos += 2
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            if code not in DTYPE_CODES:
                raise ContainerError(f"unknown dtype code {code} for '{name}'")
            dtype = DTYPE_CODES[code]
            size = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            if pos + size > len(body):
                raise ContainerError(f"payload of '{name}' runs past the end")
            arr = np.frombuffer(body, dtype=dtype, count=size // dtype.itemsize, offset=pos)
            pos += size
            if name in out:
                raise ContainerError(f"duplicate tensor name '{name}'")
            out[name] = arr.reshape(dims).astype(np.float32)
    except struct.error as exc:
        raise ContainerError(f"truncated container: {exc}") from exc
    if pos != len(body):
        raise ContainerError("trailing bytes after the last tensor")
    return out


def atomic_write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_container(path: str | Path, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    tensors = dict(tensors)
    for key, value in (meta or {}).items():
        tensors[META_PREFIX + key] = meta_tensor(value)
    atomic_write(path, encode_container(tensors))


def read_container(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Returns (tensors, metadata) with metadata entries decoded from JSON."""
    tensors = decode_container(Path(path).read_bytes())
    meta = {k[len(META_PREFIX) :]: meta_value(v) for k, v in tensors.items() if k.startswith(META_PREFIX)}
    return {k: v for k, v in tensors.items() if not k.startswith(META_PREFIX)}, meta


def meta_tensor(value) -> np.ndarray:
    raw = json.dumps(value, sort_keys=True).encode("utf-8")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.float32)


def meta_value(arr: np.ndarray):
    return json.loads(bytes(np.asarray(arr, dtype=np.uint8)).decode("utf-8"))


# ---------------------------------------------------------------------------
# model and optimizer state
# ---------------------------------------------------------------------------


def save_training_state(path, models: nn.Module, opt, named, stage: str, step: int, config: dict | None) -> None:
    tensors = {f"model/{k}": v.detach().cpu().numpy().astype(np.float32) for k, v in models.state_dict().items()}
    for name, p in named:
        st = opt.state.get(p)
        if not st:
            continue
        tensors[f"optim/{name}/exp_avg"] = st["exp_avg"].numpy()
        tensors[f"optim/{name}/exp_avg_sq"] = st["exp_avg_sq"].numpy()
        tensors[f"optim/{name}/step"] = np.asarray([float(st["step"])], dtype=np.float32)
    stages = list(getattr(models, "stages_done", []))
    if stage not in stages:
        stages.append(stage)
    meta = {"stage": stage, "step": int(step), "stages": stages, "config": config or {}}
    write_container(path, tensors, meta)


def load_models(path, models: nn.Module) -> dict:
    """Load model weights from a checkpoint; returns its metadata."""
    tensors, meta = read_container(path)
    state = {k[len("model/") :]: torch.from_numpy(v.copy()) for k, v in tensors.items() if k.startswith("model/")}
    own = models.state_dict()
    missing = set(own) - set(state)
    if missing:
        raise ContainerError(f"checkpoint lacks {len(missing)} model tensors, e.g. {sorted(missing)[0]}")
    for k, v in state.items():
        if k in own and own[k].shape != v.shape:
            raise ContainerError(f"shape mismatch for {k}: checkpoint {tuple(v.shape)}, model {tuple(own[k].shape)}")
    models.load_state_dict(state, strict=False)
    models.stages_done = list(meta.get("stages", []))
    return meta


def load_training_state(path, models: nn.Module, opt, named, stage: str) -> int:
    """Restore weights and optimizer moments; returns the step to resume at."""
    meta = load_models(path, models)
    if meta.get("stage") != stage:
        return 0
    tensors, _ = read_container(path)
    for name, p in named:
        key = f"optim/{name}/exp_avg"
        if key not in tensors:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(tensors[f"optim/{name}/step"][0])),
            "exp_avg": torch.from_numpy(tensors[key].copy()),
            "exp_avg_sq": torch.from_numpy(tensors[f"optim/{name}/exp_avg_sq"].copy()),
        }
    models.stages_done = [s for s in meta.get("stages", []) if s != stage]
    return int(meta["step"])
