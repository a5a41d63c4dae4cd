"""Model interfaces consumed by the composition pipeline."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np

from ..schedule import NoiseSchedule


@dataclass(frozen=True)
class PromptSpec:
    text: str
    class_tag: str | None = None
    embedding_id: str = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "embedding_id", hashlib.sha256(self.text.encode("utf-8")).hexdigest()[:16])


@runtime_checkable
class Denoiser(Protocol):
    def predict(self, z: np.ndarray, index: int, cond, schedule: NoiseSchedule) -> np.ndarray:
        """Noise estimate with the same shape as ``z``."""


@runtime_checkable
class SupportsVJP(Protocol):
    def vjp(self, z: np.ndarray, index: int, cond, schedule: NoiseSchedule, v: np.ndarray) -> np.ndarray:
        """``J_eps(z)^T v`` for the noise estimate at ``z``."""


@runtime_checkable
class Autoencoder(Protocol):
    factor: int

    def encode(self, x: np.ndarray) -> np.ndarray: ...

    def decode(self, z: np.ndarray) -> np.ndarray: ...

    def decode_adjoint_vec(self, v: np.ndarray) -> np.ndarray: ...


@runtime_checkable
class Embedder(Protocol):
    def embed_image(self, x: np.ndarray) -> np.ndarray: ...

    def embed_text(self, p: PromptSpec) -> np.ndarray: ...

    def image_grad_adjoint(self, x: np.ndarray, v: np.ndarray) -> np.ndarray: ...


@runtime_checkable
class FeatureBank(Protocol):
    def features(self, x: np.ndarray) -> np.ndarray: ...

    def gram(self, x: np.ndarray) -> np.ndarray: ...

    def gram_grad_adjoint(self, x: np.ndarray, dG: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class ModelBundle:
    """Everything one run needs from the model side.

    ``eta_scale`` / ``eta_style_scale`` convert the configured guidance
    strengths (tuned for a large pretrained backbone) into step sizes that
    suit this bundle's gradient magnitudes.
    """

    denoiser: Denoiser
    autoencoder: Autoencoder
    embedder: Embedder
    feature_bank: FeatureBank
    eta_scale: float = 1.0
    eta_style_scale: float = 1.0
    name: str = "custom"

    def describe(self) -> dict:
        return {
            "name": self.name,
            "denoiser": type(self.denoiser).__name__,
            "autoencoder": type(self.autoencoder).__name__,
            "embedder": type(self.embedder).__name__,
            "feature_bank": type(self.feature_bank).__name__,
            "eta_scale": self.eta_scale,
            "eta_style_scale": self.eta_style_scale,
        }
