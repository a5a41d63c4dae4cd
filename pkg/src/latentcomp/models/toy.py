"""Desk-scale stand-ins for the autoencoder, embedder and feature bank.

All three are linear (or quadratic, for the Gram matrix) in the pixels, so
their adjoints are exact and cheap.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..core import as_latent, substream_seed
from ..errors import ShapeMismatch
from .base import PromptSpec


class LinearAutoencoder:
    """Encode by ``f x f`` average pooling, decode by nearest-neighbour upsampling."""

    def __init__(self, factor: int = 2):
        self.factor = int(factor)

    def _check(self, x, what):
        x = as_latent(x, what)
        f = self.factor
        if x.shape[1] % f or x.shape[2] % f:
            raise ShapeMismatch(f"{what} spatial dims {x.shape[1:]} not divisible by {f}")
        return x

    def encode(self, x):
        x = self._check(x, "image")
        c, h, w = x.shape
        f = self.factor
        return x.reshape(c, h // f, f, w // f, f).mean(axis=(2, 4))

    def decode(self, z):
        z = as_latent(z, "latent")
        f = self.factor
        return np.repeat(np.repeat(z, f, axis=1), f, axis=2)

    def decode_adjoint_vec(self, v):
        v = self._check(v, "pixel vector")
        c, h, w = v.shape
        f = self.factor
        return v.reshape(c, h // f, f, w // f, f).sum(axis=(2, 4))


class ToyEmbedder:
    """Fixed random linear image map; prompts map to seeded unit vectors."""

    def __init__(self, image_shape: tuple[int, int, int], dim: int = 64, seed: int = 0):
        self.image_shape = tuple(int(s) for s in image_shape)
        self.dim = int(dim)
        self.seed = int(seed)
        n = int(np.prod(self.image_shape))
        rng = np.random.default_rng(substream_seed(seed, "embedder/image"))
        self.W = rng.standard_normal((self.dim, n)) / np.sqrt(n)
        self._text_cache: dict[str, np.ndarray] = {}

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.image_shape:
            raise ShapeMismatch(f"embedder configured for {self.image_shape}, got {x.shape}")
        return x

    def embed_image(self, x):
        return self.W @ self._check(x).ravel()

    def embed_text(self, p: PromptSpec):
        cached = self._text_cache.get(p.embedding_id)
        if cached is None:
            key = int(p.embedding_id, 16)
            rng = np.random.default_rng(substream_seed(self.seed ^ key, "embedder/text"))
            v = rng.standard_normal(self.dim)
            cached = self._text_cache[p.embedding_id] = v / np.linalg.norm(v)
            cached.flags.writeable = False
        return cached

    def image_grad_adjoint(self, x, v):
        x = self._check(x)
        return (self.W.T @ np.asarray(v, dtype=np.float64)).reshape(x.shape)


class ToyFeatureBank:
    """``K`` seeded 3x3 convolutions (reflect padding) and their Gram matrix."""

    def __init__(self, channels: int = 3, n_features: int = 8, seed: int = 0):
        rng = np.random.default_rng(substream_seed(seed, "feature-bank"))
        self.kernels = rng.standard_normal((n_features, channels, 3, 3)) / np.sqrt(9 * channels)

    def features(self, x):
        x = as_latent(x, "image")
        if x.shape[0] != self.kernels.shape[1]:
            raise ShapeMismatch(f"feature bank expects {self.kernels.shape[1]} channels, got {x.shape[0]}")
        if min(x.shape[1:]) < 2:
            raise ShapeMismatch("reflect padding needs spatial dims >= 2")
        padded = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="reflect")
        c, h, w = x.shape
        patches = sliding_window_view(padded, (3, 3), axis=(1, 2))  # (C, H, W, 3, 3)
        cols = patches.transpose(0, 3, 4, 1, 2).reshape(c * 9, h * w)
        k = self.kernels.shape[0]
        return (self.kernels.reshape(k, c * 9) @ cols).reshape(k, h, w)

    def features_adjoint(self, x, dF):
        c, h, w = np.shape(x)
        k = self.kernels.shape[0]
        contrib = (self.kernels.reshape(k, c * 9).T @ np.reshape(dF, (k, h * w))).reshape(c, 3, 3, h, w)
        g = np.zeros((c, h + 2, w + 2))
        for i in range(3):
            for j in range(3):
                g[:, i:i + h, j:j + w] += contrib[:, i, j]
        # fold reflect padding back onto its source rows/cols
        g[:, 2, :] += g[:, 0, :]
        g[:, h - 1, :] += g[:, h + 1, :]
        g = g[:, 1:h + 1, :]
        g[:, :, 2] += g[:, :, 0]
        g[:, :, w - 1] += g[:, :, w + 1]
        return g[:, :, 1:w + 1]

    def gram(self, x):
        F = self.features(x)
        k = F.shape[0]
        flat = F.reshape(k, -1)
        return flat @ flat.T / flat.shape[1]

    def gram_grad_adjoint(self, x, dG):
        F = self.features(x)
        k = F.shape[0]
        flat = F.reshape(k, -1)
        dG = np.asarray(dG, dtype=np.float64)
        dflat = (dG + dG.T) @ flat / flat.shape[1]
        return self.features_adjoint(x, dflat.reshape(F.shape))
