"""Deterministic first/second-order denoising steps and their inversion.

The second-order step is the data-prediction multistep rule (DPM-Solver++ 2M):
with ``h = lambda[t-1] - lambda[t]`` and ``r = h_prev / h`` the clean
prediction is extrapolated as ``(1 + 1/(2r)) x0 - 1/(2r) x0_prev`` and then
plugged into the exponential-integrator update.  The final step into index
0 is always first order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import as_latent
from .errors import IndexOverflow, IndexUnderflow, ShapeMismatch
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class TrajectoryState:
    index: int
    latent: np.ndarray
    prev_clean: np.ndarray | None = None
    branch: str = "composite"


def _check_eps(latent: np.ndarray, eps_hat) -> np.ndarray:
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps_hat.shape != latent.shape:
        raise ShapeMismatch(f"eps_hat shape {eps_hat.shape} != latent shape {latent.shape}")
    return eps_hat


def clean_from_eps(z: np.ndarray, eps_hat: np.ndarray, alpha: float, sigma: float) -> np.ndarray:
    return (z - sigma * eps_hat) / alpha


def _effective(state: TrajectoryState, eps_hat, s: NoiseSchedule, order: int):
    """(raw x0, extrapolated x0, matching eps) for a step down from ``state.index``."""
    t = state.index
    if t < 1:
        raise IndexUnderflow("cannot denoise below index 0")
    if t > s.steps:
        raise IndexOverflow(f"index {t} beyond schedule length {s.steps}")
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    z = as_latent(state.latent)
    eps_hat = _check_eps(z, eps_hat)
    a_t, s_t = s.alpha[t], s.sigma[t]
    x0 = clean_from_eps(z, eps_hat, a_t, s_t)

    # no history on the first step, none to extrapolate from at the top of the
    # grid, and the step into index 0 spans the clipped log-SNR jump, where
    # extrapolation overshoots: all three use first order
    if order == 1 or state.prev_clean is None or t + 1 > s.steps or t == 1:
        return x0, x0, eps_hat
    lam = s.log_snr
    h = lam[t - 1] - lam[t]
    h_prev = lam[t] - lam[t + 1]
    c = 0.5 * h / h_prev  # 1 / (2r)
    delta = x0 - state.prev_clean
    return x0, x0 + c * delta, eps_hat - (a_t / s_t) * c * delta


def denoise_step(state: TrajectoryState, eps_hat, s: NoiseSchedule, order: int = 1) -> TrajectoryState:
    x0, x0_eff, eps_eff = _effective(state, eps_hat, s, order)
    t = state.index
    z_next = s.alpha[t - 1] * x0_eff + s.sigma[t - 1] * eps_eff
    return TrajectoryState(index=t - 1, latent=z_next, prev_clean=x0, branch=state.branch)


def invert_step(state: TrajectoryState, eps_hat, s: NoiseSchedule, order: int = 1) -> TrajectoryState:
    """One step toward higher noise.  Order 2 mirrors the multistep rule of
    :func:`denoise_step`, extrapolating from ``state.prev_clean`` (which must
    come from the previous inversion step)."""
    t = state.index
    if t >= s.steps:
        raise IndexOverflow(f"cannot invert beyond index {s.steps}")
    if t < 0:
        raise IndexUnderflow(f"negative index {t}")
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    z = as_latent(state.latent)
    eps_hat = _check_eps(z, eps_hat)
    a_t, s_t = s.alpha[t], s.sigma[t]
    x0 = clean_from_eps(z, eps_hat, a_t, s_t)
    x0_eff, eps_eff = x0, eps_hat
    # index 0 -> 1 crosses the clipped log-SNR jump; no usable history there
    if order == 2 and state.prev_clean is not None and t >= 2:
        lam = s.log_snr
        c = 0.5 * (lam[t + 1] - lam[t]) / (lam[t] - lam[t - 1])
        delta = x0 - state.prev_clean
        x0_eff = x0 + c * delta
        eps_eff = eps_hat - (a_t / s_t) * c * delta
    z_next = s.alpha[t + 1] * x0_eff + s.sigma[t + 1] * eps_eff
    return TrajectoryState(index=t + 1, latent=z_next, prev_clean=x0, branch=state.branch)


# Refined candidates may not outgrow the plain estimate by more than this factor;
# off-manifold inputs otherwise drift to huge norms.
NORM_GROWTH = 1.02


def invert_trajectory(z0, den, cond, s: NoiseSchedule, fixed_point_iters: int = 3,
                      branch: str = "composite", order: int = 1) -> list[np.ndarray]:
    """Map a clean latent to ``[z_0, ..., z_T]``.

    First order: with ``fixed_point_iters > 0`` the noise estimate for each
    step is re-evaluated at the current guess of ``z_{t+1}`` so that one
    first-order ``denoise_step`` from ``z_{t+1}`` lands back on ``z_t``.  Each
    step keeps the candidate with the smallest round-trip residual, so
    refinement never does worse than the plain estimate.
    ``fixed_point_iters=0`` is plain DDIM-style inversion.

    ``order=2`` runs the plain multistep inversion and ignores
    ``fixed_point_iters``.
    """
    z0 = as_latent(z0, "z0")
    out = [z0]
    state = TrajectoryState(index=0, latent=z0, branch=branch)
    for t in range(s.steps):
        plain = invert_step(state, den.predict(state.latent, t, cond, s), s, order)
        if order == 2 or fixed_point_iters == 0:
            state = plain
            out.append(state.latent)
            continue
        limit = NORM_GROWTH * float(np.linalg.norm(plain.latent))
        cand, best, best_resid = plain, plain, np.inf
        for k in range(fixed_point_iters + 1):
            eps = den.predict(cand.latent, t + 1, cond, s)
            back = denoise_step(TrajectoryState(t + 1, cand.latent), eps, s, order=1).latent
            resid = float(np.linalg.norm(back - state.latent))
            if resid >= best_resid:
                break
            best, best_resid = cand, resid
            if k == fixed_point_iters:
                break
            cand = invert_step(state, eps, s)
            if float(np.linalg.norm(cand.latent)) > limit:
                break
        state = best
        out.append(state.latent)
    return out


def sample_trajectory(zT, den, cond, s: NoiseSchedule, order: int = 1, start: int | None = None,
                      stop: int = 0, return_all: bool = False, branch: str = "composite",
                      clean_endpoint: bool = True):
    """Denoise from index ``start`` (default ``T``) down to ``stop``.

    When the run ends at index 0 and ``clean_endpoint`` is set, the last step
    returns its clean prediction instead of ``alpha_0 x0 + sigma_0 eps``, so
    the residual ``sigma_0`` noise of the clipped grid is not carried into
    the output.  Returns the final latent, or with ``return_all`` a dict
    index -> latent covering every visited index.
    """
    start = s.steps if start is None else start
    state = TrajectoryState(index=start, latent=as_latent(zT, "zT"), branch=branch)
    visited = {start: state.latent}
    while state.index > stop:
        eps = den.predict(state.latent, state.index, cond, s)
        if clean_endpoint and state.index == 1:
            state = TrajectoryState(0, _effective(state, eps, s, order)[1], branch=branch)
        else:
            state = denoise_step(state, eps, s, order)
        visited[state.index] = state.latent
    return visited if return_all else state.latent
