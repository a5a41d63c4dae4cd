"""Variance-preserving noise schedules on a discrete ``T``-step grid.

Index 0 is the cleanest grid point, index ``T`` the noisiest.  Every grid
point satisfies ``alpha**2 + sigma**2 == 1`` up to rounding.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfRange, InvalidSteps

SIGMA_MIN = 1e-4
# alpha_bar at the noisiest grid point; keeps sigma_T / alpha_T near 14
ALPHA_BAR_END = 5e-3
KINDS = ("cosine", "linear-beta")

# cosine time is truncated so that alpha_bar(1) == ALPHA_BAR_END
_U_MAX = 2.0 / np.pi * np.arccos(np.sqrt(ALPHA_BAR_END))
# linear beta(u) endpoints chosen so that alpha_bar(1) ~= ALPHA_BAR_END
_BETA_MIN, _BETA_MAX = 0.1, 10.6


def _alpha_bar(kind: str, u: np.ndarray) -> np.ndarray:
    if kind == "cosine":
        return np.cos(0.5 * np.pi * _U_MAX * u) ** 2
    if kind == "linear-beta":
        return np.exp(-(_BETA_MIN * u + 0.5 * (_BETA_MAX - _BETA_MIN) * u**2))
    raise InvalidSteps(f"unknown schedule kind {kind!r}; expected one of {KINDS}")


@dataclass(frozen=True)
class NoiseSchedule:
    steps: int
    kind: str
    u: np.ndarray
    alpha: np.ndarray
    sigma: np.ndarray

    @property
    def log_snr(self) -> np.ndarray:
        return np.log(self.alpha / self.sigma)

    def digest(self) -> str:
        h = hashlib.sha256(f"{self.kind}:{self.steps}".encode())
        h.update(self.alpha.tobytes())
        h.update(self.sigma.tobytes())
        return h.hexdigest()


def build_schedule(T: int, kind: str = "cosine") -> NoiseSchedule:
    if int(T) != T or T < 2:
        raise InvalidSteps(f"need T >= 2 steps, got {T}")
    T = int(T)
    u = np.arange(T + 1, dtype=np.float64) / T
    abar = np.clip(_alpha_bar(kind, u), SIGMA_MIN**2, 1.0 - SIGMA_MIN**2)
    alpha = np.sqrt(abar)
    sigma = np.sqrt(1.0 - abar)
    if not (np.all(np.diff(alpha) < 0) and np.all(np.diff(sigma) > 0)):
        raise InvalidSteps(f"T={T} too fine for {kind} schedule: clipped grid is not strictly monotone")
    for arr in (u, alpha, sigma):
        arr.setflags(write=False)
    return NoiseSchedule(steps=T, kind=kind, u=u, alpha=alpha, sigma=sigma)


def alpha_sigma(s: NoiseSchedule, i: int) -> tuple[float, float]:
    if not 0 <= i <= s.steps:
        raise IndexOutOfRange(f"grid index {i} outside [0, {s.steps}]")
    return float(s.alpha[i]), float(s.sigma[i])


def continuous_alpha_sigma(u, kind: str = "cosine") -> tuple[np.ndarray, np.ndarray]:
    """(alpha, sigma) at arbitrary times ``u`` in [0, 1]; used for training."""
    abar = np.clip(_alpha_bar(kind, np.asarray(u, dtype=np.float64)), SIGMA_MIN**2, 1.0 - SIGMA_MIN**2)
    return np.sqrt(abar), np.sqrt(1.0 - abar)
