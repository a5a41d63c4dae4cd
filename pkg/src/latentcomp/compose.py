"""End-to-end latent composition: inversion, selective initiation, windowed
normalization + energy guidance, free denoising, decoding."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .core import as_latent, check_finite, digest, gaussian_noise, masked_channel_stats, substream_seed
from .energy import GRADIENT_MODES, GUIDED_MODES, EnergyCondition, guided_step, replace_outside
from .errors import ConfigError, EmptyMask, NonfiniteLatent, OutsideWindow, ShapeMismatch
from .masks import Box, MaskSet, build_mask_set, place_object
from .models.base import ModelBundle, PromptSpec
from .schedule import KINDS, build_schedule
from .solver import TrajectoryState, denoise_step, invert_trajectory, sample_trajectory

EPS_GUARD = 1e-5


@dataclass(frozen=True)
class CompositionConfig:
    T: int = 20
    T_prime: int = 8
    tau: int = 5
    lambda0: float = 0.1
    lambda_slope: float = 0.5
    N: int = 3
    eta: float = 15.0
    eta_style: float = 0.15
    seed: int = 0
    solver_order: int = 1
    inversion_order: int = 1
    inversion_iters: int = 3
    schedule_kind: str = "cosine"
    gradient_mode: str = "frozen-eps"
    guided_mode: str = "latent-descent"
    skip_optimization: bool = False
    skip_normalization: bool = False
    baseline_init: bool = False
    dilation: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.T < 2:
            raise ConfigError("T", f"must be >= 2, got {self.T}")
        if not 0 < self.T_prime < self.T:
            raise ConfigError("T_prime", f"must satisfy 0 < T_prime < T={self.T}, got {self.T_prime}")
        if not 0 <= self.tau <= self.T_prime:
            raise ConfigError("tau", f"must satisfy 0 <= tau <= T_prime={self.T_prime}, got {self.tau}")
        if self.N < 0:
            raise ConfigError("N", f"must be >= 0, got {self.N}")
        for key in ("eta", "eta_style"):
            v = getattr(self, key)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(key, f"must be finite and >= 0, got {v}")
        if self.solver_order not in (1, 2):
            raise ConfigError("solver_order", f"must be 1 or 2, got {self.solver_order}")
        if self.inversion_order not in (1, 2):
            raise ConfigError("inversion_order", f"must be 1 or 2, got {self.inversion_order}")
        if self.inversion_iters < 0:
            raise ConfigError("inversion_iters", "must be >= 0")
        if self.schedule_kind not in KINDS:
            raise ConfigError("schedule_kind", f"must be one of {KINDS}")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ConfigError("gradient_mode", f"must be one of {GRADIENT_MODES}")
        if self.guided_mode not in GUIDED_MODES:
            raise ConfigError("guided_mode", f"must be one of {GUIDED_MODES}")
        if self.dilation < 0:
            raise ConfigError("dilation", "must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **kw) -> "CompositionConfig":
        return replace(self, **kw)

    @property
    def window(self) -> range:
        """Indices ``t`` in ``[T' - tau, T')`` that have a following step."""
        return range(self.T_prime - 1, max(self.T_prime - self.tau, 1) - 1, -1)


PRESETS = {
    "cross-domain": {},
    "same-domain": {"T_prime": 6, "tau": 3, "lambda0": 0.1, "lambda_slope": 0.0, "skip_optimization": True},
}

CONFIG_FIELDS = {f.name: f.type for f in fields(CompositionConfig)}


def baseline_init(z_bg_T, z_fg_T, masks: MaskSet, seed: int) -> np.ndarray:
    """Merge at ``T`` with fresh Gaussian noise in the transition band."""
    z_bg_T, z_fg_T = _pair(z_bg_T, z_fg_T, masks)
    noise = gaussian_noise(z_bg_T.shape, substream_seed(seed, "noise"))
    out = np.where(masks.latent_object[None] > 0, z_fg_T, z_bg_T)
    return np.where(masks.latent_transition[None] > 0, noise, out)


def selective_init(z_bg, z_fg, masks: MaskSet) -> np.ndarray:
    z_bg, z_fg = _pair(z_bg, z_fg, masks)
    return np.where(masks.latent_object[None] > 0, z_fg, z_bg)


def _pair(a, b, masks):
    a, b = as_latent(a, "background latent"), as_latent(b, "foreground latent")
    if a.shape != b.shape or a.shape[1:] != masks.latent_shape:
        raise ShapeMismatch(f"latents {a.shape}, {b.shape} vs latent masks {masks.latent_shape}")
    return a, b


def lambda_at(cfg: CompositionConfig, t: int) -> float:
    if not cfg.T_prime - cfg.tau <= t < cfg.T_prime:
        raise OutsideWindow(f"t={t} outside [{cfg.T_prime - cfg.tau}, {cfg.T_prime})")
    lam = cfg.lambda0 + cfg.lambda_slope * (cfg.T_prime - t) / cfg.tau
    return float(min(max(lam, 0.0), 1.0))


def adaptive_normalize(z_res, z_bg, masks: MaskSet, lam: float, eps_guard: float = EPS_GUARD) -> np.ndarray:
    """Pull the object region's channel mean/std toward the background latent's.

    Background statistics come from the whole background latent; object
    statistics from the object's masked support only.
    """
    z_res = as_latent(z_res, "z_res")
    z_bg = as_latent(z_bg, "z_bg")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    obj = masks.latent_object
    if not obj.any():
        raise EmptyMask("latent object mask is empty")
    if lam == 0.0:
        return z_res.copy()
    s_obj = masked_channel_stats(z_res, obj)
    s_bg = masked_channel_stats(z_bg, np.ones(z_bg.shape[1:]))
    scale = (s_bg.std / (s_obj.std + eps_guard))[:, None, None]
    z_adn = scale * (z_res - s_obj.mean[:, None, None]) + s_bg.mean[:, None, None]
    blended = lam * z_adn + (1.0 - lam) * z_res
    return np.where(obj[None] > 0, blended, z_res)


@dataclass
class CompositionResult:
    image: np.ndarray
    manifest: dict
    masks: MaskSet
    fg_aligned: np.ndarray
    composite: dict  # index -> composite latent after that index's processing
    background: dict  # index -> background-branch latent

    def __iter__(self):
        return iter((self.image, self.manifest))


def manifest_digest(manifest: dict) -> str:
    body = {k: v for k, v in manifest.items() if k not in ("wall_time", "manifest_digest")}
    return hashlib.sha256(json.dumps(body, sort_keys=True, default=float).encode()).hexdigest()


def _finite(z, index, where):
    if not check_finite(z):
        raise NonfiniteLatent(index, where)
    return z


def compose_run(x_bg, x_fg, obj_mask, user_box, prompt, cfg: CompositionConfig,
                bundle: ModelBundle) -> CompositionResult:
    started = time.perf_counter()
    x_bg = as_latent(x_bg, "background image")
    x_fg = as_latent(x_fg, "foreground image")
    if not (check_finite(x_bg) and check_finite(x_fg)):
        raise ValueError("input images contain non-finite values")
    if isinstance(user_box, str):
        user_box = Box.parse(user_box)
    if isinstance(prompt, str):
        prompt = PromptSpec(prompt)
    canvas = x_bg.shape[1:]
    ae, den = bundle.autoencoder, bundle.denoiser
    s = build_schedule(cfg.T, cfg.schedule_kind)

    fg_aligned, obj_aligned = place_object(x_fg, obj_mask, user_box, canvas)
    masks = build_mask_set(user_box.mask(canvas), obj_aligned, ae.factor, cfg.dilation)
    if not masks.latent_object.any():
        raise EmptyMask("placed object vanishes at latent resolution")
    z_bg0, z_fg0 = ae.encode(x_bg), ae.encode(fg_aligned)

    # branches are inverted and denoised unconditioned
    inv_bg = invert_trajectory(z_bg0, den, None, s, cfg.inversion_iters, "background", cfg.inversion_order)
    inv_fg = invert_trajectory(z_fg0, den, None, s, cfg.inversion_iters, "foreground", cfg.inversion_order)
    window = list(cfg.window)
    bg_stop = min(window[-1] - 1, cfg.T_prime) if window else cfg.T_prime
    bg = sample_trajectory(inv_bg[-1], den, None, s, cfg.solver_order, stop=bg_stop, return_all=True,
                           branch="background", clean_endpoint=False)

    steps = []
    if cfg.baseline_init:
        start = cfg.T
        z = baseline_init(bg[cfg.T], inv_fg[-1], masks, cfg.seed)
        steps.append({"index": start, "phase": "init", "rule": "baseline"})
    else:
        start = cfg.T_prime
        fg_tp = sample_trajectory(inv_fg[-1], den, None, s, cfg.solver_order, stop=cfg.T_prime)
        z = selective_init(bg[cfg.T_prime], fg_tp, masks)
        steps.append({"index": start, "phase": "init", "rule": "selective"})
    _finite(z, start, "init")

    cond = EnergyCondition(prompt, x_bg, masks.user)
    composite = {start: z}
    state = TrajectoryState(start, z)
    opt_cfg = cfg if not cfg.skip_optimization else cfg.with_(N=0)
    for t in range(start, 0, -1):
        rec = {"index": t}
        if t in window:
            rec["phase"] = "window"
            z = state.latent
            if not cfg.skip_normalization:
                lam = lambda_at(cfg, t)
                z = _finite(adaptive_normalize(z, bg[t], masks, lam), t, "normalize")
                rec["lambda"] = lam
            gr = guided_step(z, bg[t - 1], t, opt_cfg, bundle, s, masks, cond, prev_clean=state.prev_clean)
            rec["energy"] = gr.report.to_dict()
            state = TrajectoryState(t - 1, gr.latent, gr.prev_clean)
        else:
            rec["phase"] = "free"
            eps = den.predict(state.latent, t, prompt, s)
            state = denoise_step(state, eps, s, cfg.solver_order)
        _finite(state.latent, t - 1, rec["phase"])
        composite[t - 1] = state.latent
        steps.append(rec)

    image = np.clip(ae.decode(state.latent), 0.0, 1.0)
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "substreams": {"noise": substream_seed(cfg.seed, "noise")},
        "schedule": {"kind": s.kind, "steps": s.steps, "digest": s.digest()},
        "bundle": bundle.describe(),
        "prompt": {"text": prompt.text, "embedding_id": prompt.embedding_id},
        "user_box": str(user_box),
        "latent_factor": ae.factor,
        "window": window,
        "steps": steps,
        "inputs": {
            "background": digest(x_bg),
            "foreground": digest(x_fg),
            "object_mask": digest(np.asarray(obj_mask, dtype=np.float64)),
        },
        "output": digest(image),
    }
    manifest["manifest_digest"] = manifest_digest(manifest)
    manifest["wall_time"] = time.perf_counter() - started
    return CompositionResult(image, manifest, masks, fg_aligned, composite, bg)


CALIBRATION_TARGET = 0.02


def calibrate_energy_scales(bundle: ModelBundle, samples, cfg: CompositionConfig = CompositionConfig(),
                            target: float = CALIBRATION_TARGET) -> dict:
    """Measure step-size multipliers that make one guided iteration move the
    object latent by ``target`` of its norm (median over samples and window steps).

    ``samples`` yields objects with ``background``, ``foreground``,
    ``object_mask``, ``user_box`` and ``prompt``.
    """
    from .energy import energy_gradient_terms

    probe = cfg.with_(skip_optimization=True)
    s = build_schedule(cfg.T, cfg.schedule_kind)
    ratios_sem, ratios_sty = [], []
    for smp in samples:
        res = compose_run(smp.background, smp.foreground, smp.object_mask, smp.user_box, smp.prompt, probe,
                          bundle)
        obj = res.masks.latent_object
        cond = EnergyCondition(smp.prompt, smp.background, res.masks.user)
        for t in cfg.window:
            z = res.composite[t]
            g = energy_gradient_terms(z, t, cond, bundle, s, "frozen-eps")
            zn = np.linalg.norm(z * obj)
            gs, gy = np.linalg.norm(g.grad_semantic * obj), np.linalg.norm(g.grad_style * obj)
            if gs > 0 and cfg.eta > 0:
                ratios_sem.append(target * zn / (cfg.eta * gs))
            if gy > 0 and cfg.eta_style > 0:
                ratios_sty.append(target * zn / (cfg.eta_style * gy))
    return {
        "eta_scale": float(np.median(ratios_sem)) if ratios_sem else 1.0,
        "eta_style_scale": float(np.median(ratios_sty)) if ratios_sty else 1.0,
        "target": target,
        "measurements": len(ratios_sem),
    }
