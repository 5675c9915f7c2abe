"""Binary tensor files and checkpoint directories.

Each array is stored in its own file::

    b"GFT1" | u8 dtype tag (0 = float32) | u8 ndim | ndim x u32 LE dims | row-major payload

A checkpoint directory holds one such file per named array plus
``manifest.json`` mapping names to files alongside run metadata
(iteration, epoch, learning rate, config).
"""
from __future__ import annotations

import json
import re
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..errors import ContractViolation

MAGIC = b"GFT1"
_DTYPES = {0: np.dtype("<f4")}
_TAGS = {np.dtype("<f4"): 0}


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim > 255:
        raise ContractViolation("tensor has too many dims for the GFT1 header")
    header = MAGIC + struct.pack("<BB", 0, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def decode_tensor(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise ContractViolation(f"bad tensor magic {buf[:4]!r}")
    tag, ndim = struct.unpack_from("<BB", buf, 4)
    if tag not in _DTYPES:
        raise ContractViolation(f"unknown dtype tag {tag}")
    dims = struct.unpack_from(f"<{ndim}I", buf, 6)
    off = 6 + 4 * ndim
    dtype = _DTYPES[tag]
    count = int(np.prod(dims)) if dims else 1
    if len(buf) - off != count * dtype.itemsize:
        raise ContractViolation(f"payload is {len(buf) - off} bytes, expected {count * dtype.itemsize}")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(dims).copy()


def write_tensor(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def _file_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name) + ".gft"


def save_checkpoint(directory, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> Path:
    """Write every array plus ``manifest.json``; returns the manifest path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, arr in arrays.items():
        fname = _file_name(name)
        if fname in files.values():
            raise ContractViolation(f"two arrays map to file {fname}")
        write_tensor(d / fname, arr)
        files[name] = fname
    manifest = dict(meta)
    manifest["tensors"] = files
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    d = Path(directory)
    if d.is_file():
        d = d.parent
    manifest = json.loads((d / "manifest.json").read_text())
    arrays = {name: read_tensor(d / fname) for name, fname in manifest["tensors"].items()}
    return arrays, manifest
