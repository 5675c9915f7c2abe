"""Raster file formats.

Images and label rasters use a farbfeld-like layout: a 12-byte header
(4-byte magic, u32 LE width, u32 LE height) followed by the row-major
payload. Attention maps are exported as binary 8-bit PGM (P5).
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ContractViolation

RGB_MAGIC = b"GFRB"  # uint8 R,G,B per pixel
LABEL_MAGIC = b"GFLB"  # uint8 class id per pixel
HEIGHT_MAGIC = b"GFHT"  # float32 LE per pixel

_PAYLOAD = {RGB_MAGIC: (np.dtype("u1"), 3), LABEL_MAGIC: (np.dtype("u1"), 1),
            HEIGHT_MAGIC: (np.dtype("<f4"), 1)}


def encode_raster(arr: np.ndarray, magic: bytes) -> bytes:
    dtype, ch = _PAYLOAD[magic]
    arr = np.asarray(arr)
    if ch == 3 and (arr.ndim != 3 or arr.shape[2] != 3):
        raise ContractViolation(f"RGB raster must be H x W x 3, got {arr.shape}")
    if ch == 1 and arr.ndim != 2:
        raise ContractViolation(f"single-channel raster must be H x W, got {arr.shape}")
    h, w = arr.shape[:2]
    return magic + struct.pack("<II", w, h) + np.ascontiguousarray(arr, dtype=dtype).tobytes()


def decode_raster(buf: bytes) -> np.ndarray:
    magic = bytes(buf[:4])
    if magic not in _PAYLOAD:
        raise ContractViolation(f"unknown raster magic {magic!r}")
    w, h = struct.unpack_from("<II", buf, 4)
    dtype, ch = _PAYLOAD[magic]
    count = w * h * ch
    if len(buf) - 12 != count * dtype.itemsize:
        raise ContractViolation(f"raster payload is {len(buf) - 12} bytes, expected {count * dtype.itemsize}")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=12)
    return arr.reshape((h, w, 3) if ch == 3 else (h, w)).copy()


def write_raster(path, arr: np.ndarray, magic: bytes) -> None:
    Path(path).write_bytes(encode_raster(arr, magic))


def read_raster(path) -> np.ndarray:
    try:
        return decode_raster(Path(path).read_bytes())
    except OSError as exc:
        raise OSError(f"cannot read raster {path}: {exc.strerror}") from exc


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Scale values in [0, 1] by 255 and round half up."""
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path, values01: np.ndarray) -> None:
    """Binary PGM of a 2-D array in [0, 1], scaled by 255."""
    img = to_uint8(np.asarray(values01, dtype=np.float64))
    if img.ndim != 2:
        raise ContractViolation(f"PGM needs a 2-D array, got {img.shape}")
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ContractViolation(f"{path} is not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ContractViolation("only 8-bit PGM is supported")
    return np.frombuffer(parts[4][:w * h], dtype=np.uint8).reshape(h, w).copy()
