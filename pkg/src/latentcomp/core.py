"""Numeric primitives: latent validation, seeded noise, masked channel statistics.

Latents are plain ``numpy`` arrays of shape ``(channels, height, width)``.
Masks are ``(height, width)`` arrays holding only 0 and 1.
"""

from __future__ import annotations

import hashlib
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMask, ShapeMismatch


def as_latent(x, name: str = "latent") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ShapeMismatch(f"{name} must be a non-empty (C, H, W) array, got shape {arr.shape}")
    return arr


def check_finite(x: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(x)))


def as_mask(m, shape: tuple[int, int] | None = None, name: str = "mask") -> np.ndarray:
    """Coerce ``m`` to a float64 0/1 array, optionally checking its spatial shape."""
    arr = np.asarray(m)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ShapeMismatch(f"{name} has shape {arr.shape}, expected {tuple(shape)}")
    if arr.dtype == bool:
        return arr.astype(np.float64)
    arr = arr.astype(np.float64)
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValueError(f"{name} must be binary (0/1)")
    return arr


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray
    count: int

    def vector(self) -> np.ndarray:
        return np.concatenate([self.mean, self.std])


def masked_channel_stats(t, m) -> ChannelStats:
    """Per-channel mean and population std over the active sites of ``m``.

    Sites where ``m == 0`` never enter the computation, so their values
    cannot influence the result.
    """
    t = as_latent(t)
    m = as_mask(m, t.shape[1:])
    active = m.astype(bool)
    count = int(active.sum())
    if count == 0:
        raise EmptyMask("mask has no active site")
    vals = t[:, active].astype(np.float64)  # (C, count)
    mean = vals.mean(axis=1)
    std = np.sqrt(np.mean((vals - mean[:, None]) ** 2, axis=1))
    return ChannelStats(mean=mean, std=std, count=count)


def gaussian_noise(shape: tuple[int, int, int], seed: int) -> np.ndarray:
    """Standard normal tensor that is a pure function of ``(shape, seed)``."""
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or min(shape) < 1:
        raise ShapeMismatch(f"noise shape must be three positive dims, got {shape}")
    rng = np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))
    return rng.standard_normal(shape)


def substream_seed(seed: int, name: str) -> int:
    """Derive a named 64-bit substream seed (noise, dataset, embedder, ...)."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def digest(*arrays) -> str:
    """sha256 over the raw bytes (and shapes) of the given arrays."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.shape).encode())
        h.update(str(a.dtype).encode())
        h.update(a.tobytes())
    return h.hexdigest()
