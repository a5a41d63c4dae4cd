"""Binary PPM (P6) / PGM (P5) reading and atomic writing, 8-bit only."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np


def _tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated header integers, skipping comments."""
    out, pos = [], 2
    while len(out) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        out.append(int(data[start:pos]))
    return out, pos + 1  # exactly one whitespace byte precedes the raster


def _read(path, magic: bytes, channels: int) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:2] != magic:
        raise ValueError(f"{path}: expected {magic.decode()} file, found {data[:2]!r}")
    (w, h, maxval), pos = _tokens(data, 3)
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit files supported (maxval {maxval})")
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h * channels, offset=pos)
    return raster.reshape(h, w, channels).transpose(2, 0, 1).astype(np.float64) / 255.0


def to_uint8(x) -> np.ndarray:
    return np.round(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_ppm(path) -> np.ndarray:
    """(3, H, W) float image in [0, 1]."""
    return _read(path, b"P6", 3)


def read_pgm(path) -> np.ndarray:
    """(H, W) float image in [0, 1]."""
    return _read(path, b"P5", 1)[0]


def read_mask(path) -> np.ndarray:
    return (read_pgm(path) >= 0.5).astype(np.float64)


def write_ppm(path, img) -> None:
    img = to_uint8(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"PPM needs a (3, H, W) image, got {img.shape}")
    _, h, w = img.shape
    atomic_write_bytes(path, f"P6\n{w} {h}\n255\n".encode() + img.transpose(1, 2, 0).tobytes())


def write_pgm(path, img) -> None:
    img = to_uint8(img)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a (H, W) image, got {img.shape}")
    h, w = img.shape
    atomic_write_bytes(path, f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def write_mask(path, mask) -> None:
    write_pgm(path, (np.asarray(mask) > 0).astype(np.float64))
