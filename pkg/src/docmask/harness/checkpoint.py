"""Binary checkpoint format.

Layout (little-endian)::

    b"LLV3CKPT"  u32 version  u32 meta_len  meta (UTF-8 JSON)
    u8 float_width (4 or 8)   u32 tensor_count
    per tensor: u32 name_len, name, u32 ndim, u32 dims[ndim], data
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import DataError, FormatError

MAGIC = b"LLV3CKPT"
VERSION = 1
_U32 = struct.Struct("<I")


def save_checkpoint(path, tensors: dict[str, torch.Tensor], meta: dict, float_width: int = 4) -> Path:
    """Write atomically: a crash mid-write leaves any previous file intact."""
    if float_width not in (4, 8):
        raise ValueError("float_width must be 4 or 8")
    dtype = np.dtype("<f4" if float_width == 4 else "<f8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(_U32.pack(VERSION))
        f.write(_U32.pack(len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<B", float_width))
        f.write(_U32.pack(len(tensors)))
        for name, t in tensors.items():
            arr = t.detach().cpu().numpy().astype(dtype, copy=False)
            nb = name.encode("utf-8")
            f.write(_U32.pack(len(nb)))
            f.write(nb)
            f.write(_U32.pack(arr.ndim))
            for d in arr.shape:
                f.write(_U32.pack(d))
            f.write(np.ascontiguousarray(arr).tobytes())
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    off = len(MAGIC)

    def u32() -> int:
        nonlocal off
        (v,) = _U32.unpack_from(data, off)
        off += 4
        return v

    version = u32()
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    meta_len = u32()
    meta = json.loads(data[off: off + meta_len].decode("utf-8"))
    off += meta_len
    width = data[off]
    off += 1
    if width not in (4, 8):
        raise FormatError(f"{path}: bad float width {width}")
    dtype = np.dtype("<f4" if width == 4 else "<f8")
    tensors = {}
    for _ in range(u32()):
        n = u32()
        name = data[off: off + n].decode("utf-8")
        off += n
        shape = tuple(u32() for _ in range(u32()))
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * width
        if off + nbytes > len(data):
            raise FormatError(f"{path}: truncated tensor {name}")
        tensors[name] = np.frombuffer(data, dtype=dtype, count=count, offset=off).reshape(shape).copy()
        off += nbytes
    meta["_float_width"] = width
    return meta, tensors


def load_into(module: torch.nn.Module, tensors: dict[str, np.ndarray], prefix: str = "", strict: bool = True) -> None:
    """Copy matching tensors into ``module``'s parameters, keeping its dtype."""
    state = module.state_dict()
    wanted = {k: v for k, v in tensors.items() if k.startswith(prefix)}
    loaded = {}
    for k, v in wanted.items():
        key = k[len(prefix):]
        if key in state:
            if tuple(state[key].shape) != v.shape:
                raise FormatError(f"shape mismatch for {key}: {tuple(state[key].shape)} vs {v.shape}")
            loaded[key] = torch.from_numpy(v).to(state[key].dtype)
    if strict:
        missing = set(state) - set(loaded)
        if missing:
            raise FormatError(f"checkpoint lacks parameters {sorted(missing)[:5]}")
    module.load_state_dict(loaded, strict=False)
