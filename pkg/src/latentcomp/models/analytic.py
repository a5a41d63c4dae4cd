"""Closed-form optimal denoiser for isotropic Gaussian-mixture latents."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..core import as_latent
from ..errors import ShapeMismatch
from ..schedule import NoiseSchedule


@dataclass(frozen=True)
class GaussianMixtureModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, C, H, W)
    stds: np.ndarray  # (K,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        means = np.asarray(self.means, dtype=np.float64)
        stds = np.asarray(self.stds, dtype=np.float64)
        if means.ndim != 4 or w.shape != (means.shape[0],) or stds.shape != w.shape:
            raise ShapeMismatch("weights/stds must be (K,), means (K, C, H, W)")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        if np.any(stds < 0):
            raise ValueError("component stds must be non-negative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    @classmethod
    def single(cls, mean, std: float) -> "GaussianMixtureModel":
        mean = as_latent(mean, "mean")
        return cls(np.ones(1), mean[None], np.array([float(std)]))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.means.shape[1:]

    def _terms(self, z, alpha: float, sigma: float):
        z = as_latent(z)
        if z.shape != self.shape:
            raise ShapeMismatch(f"latent shape {z.shape} != mixture shape {self.shape}")
        var = alpha**2 * self.stds**2 + sigma**2  # (K,)
        diff = z[None] - alpha * self.means  # (K, C, H, W)
        n = z.size
        sq = np.sum(diff.reshape(len(var), -1) ** 2, axis=1)
        logp = np.log(self.weights) - 0.5 * n * np.log(2 * np.pi * var) - 0.5 * sq / var
        return diff, var, logp

    def log_density(self, z, index: int, s: NoiseSchedule) -> float:
        _, _, logp = self._terms(z, s.alpha[index], s.sigma[index])
        return float(logsumexp(logp))


def analytic_denoiser_eps(gm: GaussianMixtureModel, z, index: int, s: NoiseSchedule) -> np.ndarray:
    """Noise estimate ``-sigma_t * grad log p_t(z)`` of the noised mixture."""
    alpha, sigma = s.alpha[index], s.sigma[index]
    diff, var, logp = gm._terms(z, alpha, sigma)
    w = np.exp(logp - logsumexp(logp))
    return sigma * np.tensordot(w / var, diff, axes=1)


class AnalyticDenoiser:
    """Denoiser backed by :func:`analytic_denoiser_eps`; ignores conditioning."""

    def __init__(self, gm: GaussianMixtureModel):
        self.gm = gm

    def predict(self, z, index, cond, schedule):
        return analytic_denoiser_eps(self.gm, z, index, schedule)

    def vjp(self, z, index, cond, schedule, v):
        # eps = -sigma * grad log p, so its Jacobian is -sigma * Hessian (symmetric)
        alpha, sigma = schedule.alpha[index], schedule.sigma[index]
        diff, var, logp = self.gm._terms(z, alpha, sigma)
        w = np.exp(logp - logsumexp(logp))
        v = np.asarray(v, dtype=np.float64)
        scores = -diff / var[:, None, None, None]  # per-component score
        mean_score = np.tensordot(w, scores, axes=1)
        proj = np.sum(scores.reshape(len(w), -1) * v.reshape(1, -1), axis=1)
        hv = (-np.sum(w / var) * v
              + np.tensordot(w * proj, scores, axes=1)
              - mean_score * float(np.sum(mean_score * v)))
        return -sigma * hv
