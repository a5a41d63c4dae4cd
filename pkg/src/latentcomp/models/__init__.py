"""Model interfaces, toy backends and bundle builders."""

from __future__ import annotations

import numpy as np

from .analytic import AnalyticDenoiser, GaussianMixtureModel, analytic_denoiser_eps
from .base import Autoencoder, Denoiser, Embedder, FeatureBank, ModelBundle, PromptSpec
from .toy import LinearAutoencoder, ToyEmbedder, ToyFeatureBank

# Step-size multipliers for the toy backends, frozen from
# ``calibrate_energy_scales`` on make_toy_domains(seed=0, n=8) with the
# default config; tests re-run the calibration and check agreement.
TOY_ETA_SCALE = 0.1
TOY_ETA_STYLE_SCALE = 20.0


def toy_bundle(denoiser, image_shape=(3, 32, 32), seed: int = 0, factor: int = 2,
               eta_scale: float = TOY_ETA_SCALE, eta_style_scale: float = TOY_ETA_STYLE_SCALE,
               name: str = "toy") -> ModelBundle:
    return ModelBundle(
        denoiser=denoiser,
        autoencoder=LinearAutoencoder(factor),
        embedder=ToyEmbedder(image_shape, seed=seed),
        feature_bank=ToyFeatureBank(image_shape[0], seed=seed),
        eta_scale=eta_scale,
        eta_style_scale=eta_style_scale,
        name=name,
    )


def fitted_gaussian_denoiser(latents) -> AnalyticDenoiser:
    """Single isotropic Gaussian fitted to a stack of latents."""
    lat = np.asarray(latents, dtype=np.float64)
    mean = lat.mean(axis=0)
    std = float(np.sqrt(np.mean((lat - mean) ** 2))) or 1.0
    return AnalyticDenoiser(GaussianMixtureModel.single(mean, std))


__all__ = [
    "AnalyticDenoiser", "Autoencoder", "Denoiser", "Embedder", "FeatureBank", "GaussianMixtureModel",
    "LinearAutoencoder", "ModelBundle", "PromptSpec", "ToyEmbedder", "ToyFeatureBank",
    "analytic_denoiser_eps", "fitted_gaussian_denoiser", "toy_bundle",
]
