"""Energy functions on the one-shot clean prediction and the guided update."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import as_latent
from .errors import DegenerateEmbedding, ShapeMismatch, UnsupportedMode
from .models.base import ModelBundle, PromptSpec, SupportsVJP
from .schedule import NoiseSchedule
from .solver import TrajectoryState, denoise_step, invert_step

GRADIENT_MODES = ("frozen-eps", "through-denoiser", "finite-difference")
GUIDED_MODES = ("latent-descent", "time-travel")
FD_STEP = 1e-3


@dataclass(frozen=True)
class CleanPrediction:
    latent_clean: np.ndarray
    pixel_clean: np.ndarray


@dataclass(frozen=True)
class EnergyCondition:
    prompt: PromptSpec
    x_bg: np.ndarray
    user_mask: np.ndarray  # pixel resolution


@dataclass
class EnergyReport:
    index: int
    iterations: list[dict] = field(default_factory=list)

    @property
    def semantic(self) -> float | None:
        return self.iterations[-1]["semantic"] if self.iterations else None

    @property
    def style(self) -> float | None:
        return self.iterations[-1]["style"] if self.iterations else None

    def to_dict(self) -> dict:
        return {"index": self.index, "iterations": self.iterations}


def predict_clean(z_t, eps_hat, index: int, s: NoiseSchedule, ae) -> CleanPrediction:
    z_t = as_latent(z_t, "z_t")
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps_hat.shape != z_t.shape:
        raise ShapeMismatch(f"eps_hat shape {eps_hat.shape} != latent shape {z_t.shape}")
    z0 = (z_t - s.sigma[index] * eps_hat) / s.alpha[index]
    return CleanPrediction(z0, ae.decode(z0))


def _semantic(x, p, emb, want_grad=True):
    a = emb.embed_image(x)
    b = emb.embed_text(p)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        raise DegenerateEmbedding(f"embedding norm underflow (image {na:.3g}, text {nb:.3g})")
    cos = float(a @ b) / (na * nb)
    value = 1.0 - cos
    if not want_grad:
        return value, None
    d_a = -(b / (na * nb) - cos * a / na**2)
    return value, emb.image_grad_adjoint(x, d_a)


_BG_GRAM: list = [None, None, None]  # feature bank, background bytes, Gram


def _background_gram(fb, x_bg):
    key = x_bg.tobytes()
    if _BG_GRAM[0] is not fb or _BG_GRAM[1] != key:
        _BG_GRAM[:] = [fb, key, fb.gram(x_bg)]
    return _BG_GRAM[2]


def _style(x, m_u, x_bg, fb, want_grad=True):
    x = as_latent(x, "image")
    x_bg = as_latent(x_bg, "background image")
    m_u = np.asarray(m_u, dtype=np.float64)
    if x.shape != x_bg.shape or m_u.shape != x.shape[1:]:
        raise ShapeMismatch(f"style energy inputs disagree: {x.shape}, {x_bg.shape}, mask {m_u.shape}")
    xm = x * m_u
    diff = fb.gram(xm) - _background_gram(fb, x_bg)
    value = float(np.sum(diff**2))
    if not want_grad:
        return value, None
    return value, m_u * fb.gram_grad_adjoint(xm, 2.0 * diff)


def semantic_energy(x, p: PromptSpec, emb) -> float:
    return _semantic(x, p, emb, want_grad=False)[0]


def style_energy(x, m_u, x_bg, fb) -> float:
    return _style(x, m_u, x_bg, fb, want_grad=False)[0]


def energy_terms(z_t, index, cond: EnergyCondition, bundle: ModelBundle, s: NoiseSchedule, eps_hat=None):
    """(F, F') evaluated on the clean prediction of ``z_t``."""
    if eps_hat is None:
        eps_hat = bundle.denoiser.predict(z_t, index, cond.prompt, s)
    x = predict_clean(z_t, eps_hat, index, s, bundle.autoencoder).pixel_clean
    return (_semantic(x, cond.prompt, bundle.embedder, False)[0],
            _style(x, cond.user_mask, cond.x_bg, bundle.feature_bank, False)[0])


@dataclass(frozen=True)
class EnergyGradient:
    semantic: float
    style: float
    grad_semantic: np.ndarray  # d F / d z_t, unscaled
    grad_style: np.ndarray  # d F' / d z_t, unscaled

    def combined(self, eta: float, eta_style: float) -> np.ndarray:
        if eta == 0 and eta_style == 0:
            return np.zeros_like(self.grad_semantic)
        return eta * self.grad_semantic + eta_style * self.grad_style


def _pixel_to_latent(bundle, index, s, z_t, g_x, mode, cond):
    ae = bundle.autoencoder
    u = ae.decode_adjoint_vec(g_x)
    alpha, sigma = s.alpha[index], s.sigma[index]
    if mode == "frozen-eps":
        return u / alpha
    # x0 = D((z - sigma eps(z)) / alpha)  =>  grad = (u - sigma J_eps^T u) / alpha
    return (u - sigma * bundle.denoiser.vjp(z_t, index, cond.prompt, s, u)) / alpha


def energy_gradient_terms(z_t, index, cond: EnergyCondition, bundle: ModelBundle, s: NoiseSchedule,
                          mode: str = "frozen-eps", eps_hat=None, fd_step: float = FD_STEP,
                          freeze_eps_in_fd: bool = True) -> EnergyGradient:
    if mode not in GRADIENT_MODES:
        raise UnsupportedMode(f"unknown gradient mode {mode!r}")
    if mode == "through-denoiser" and not isinstance(bundle.denoiser, SupportsVJP):
        raise UnsupportedMode(f"{type(bundle.denoiser).__name__} has no vjp; through-denoiser mode unavailable")
    z_t = as_latent(z_t, "z_t")
    if eps_hat is None:
        eps_hat = bundle.denoiser.predict(z_t, index, cond.prompt, s)

    if mode == "finite-difference":
        return _fd_gradient(z_t, index, cond, bundle, s, eps_hat if freeze_eps_in_fd else None, fd_step)

    x = predict_clean(z_t, eps_hat, index, s, bundle.autoencoder).pixel_clean
    f_sem, gx_sem = _semantic(x, cond.prompt, bundle.embedder)
    f_sty, gx_sty = _style(x, cond.user_mask, cond.x_bg, bundle.feature_bank)
    return EnergyGradient(
        f_sem, f_sty,
        _pixel_to_latent(bundle, index, s, z_t, gx_sem, mode, cond),
        _pixel_to_latent(bundle, index, s, z_t, gx_sty, mode, cond),
    )


def _fd_gradient(z_t, index, cond, bundle, s, eps_frozen, h):
    def terms(z):
        return np.array(energy_terms(z, index, cond, bundle, s, eps_hat=eps_frozen))

    base = terms(z_t)
    flat = z_t.ravel()
    grads = np.zeros((2, flat.size))
    for i in range(flat.size):
        zp = flat.copy()
        zp[i] += h
        zm = flat.copy()
        zm[i] -= h
        grads[:, i] = (terms(zp.reshape(z_t.shape)) - terms(zm.reshape(z_t.shape))) / (2 * h)
    grads = grads.reshape((2,) + z_t.shape)
    return EnergyGradient(float(base[0]), float(base[1]), grads[0], grads[1])


def energy_gradient(z_t, index, cond: EnergyCondition, bundle: ModelBundle, s: NoiseSchedule,
                    mode: str = "frozen-eps", eta: float = 15.0, eta_style: float = 0.15,
                    eps_hat=None) -> np.ndarray:
    """Gradient of ``eta * F + eta_style * F'`` with respect to ``z_t`` (before masking)."""
    if eta == 0 and eta_style == 0:
        return np.zeros_like(as_latent(z_t, "z_t"))
    return energy_gradient_terms(z_t, index, cond, bundle, s, mode, eps_hat).combined(eta, eta_style)


@dataclass(frozen=True)
class GuidedResult:
    latent: np.ndarray
    prev_clean: np.ndarray | None
    report: EnergyReport
    descent: np.ndarray | None = None  # total energy update applied to the latent (zero outside the object)


def effective_scales(cfg, bundle: ModelBundle) -> tuple[float, float]:
    return cfg.eta * bundle.eta_scale, cfg.eta_style * bundle.eta_style_scale


def replace_outside(res: np.ndarray, z_bg: np.ndarray, latent_object: np.ndarray) -> np.ndarray:
    return np.where(latent_object[None] > 0, res, z_bg)


def guided_step(z_t_res, z_bg_next, index: int, cfg, bundle: ModelBundle, s: NoiseSchedule, masks,
                cond: EnergyCondition, prev_clean=None, backtrack: int = 0) -> GuidedResult:
    """Energy-guided step from ``index`` to ``index - 1`` followed by replacement.

    ``cfg`` supplies ``N``, ``eta``, ``eta_style``, ``gradient_mode``,
    ``guided_mode`` and ``solver_order``.  With ``backtrack > 0`` a
    latent-descent update that raises the weighted energy is halved up to
    that many times.
    """
    z = as_latent(z_t_res, "z_t_res")
    z_bg_next = as_latent(z_bg_next, "z_bg_next")
    if z_bg_next.shape != z.shape:
        raise ShapeMismatch(f"background latent {z_bg_next.shape} != composite {z.shape}")
    obj = masks.latent_object
    eta, eta_sty = effective_scales(cfg, bundle)
    active = cfg.N > 0 and (eta != 0 or eta_sty != 0)
    report = EnergyReport(index=index)
    den = bundle.denoiser

    def evaluate(zc):
        eps = den.predict(zc, index, cond.prompt, s)
        if not active:
            return eps, None
        return eps, energy_gradient_terms(zc, index, cond, bundle, s, cfg.gradient_mode, eps_hat=eps)

    def record(i, g, step=1.0):
        report.iterations.append({
            "iteration": i,
            "semantic": g.semantic,
            "style": g.style,
            "weighted": eta * g.semantic + eta_sty * g.style,
            "applied_semantic_norm": float(step * eta * np.linalg.norm(g.grad_semantic * obj)),
            "applied_style_norm": float(step * eta_sty * np.linalg.norm(g.grad_style * obj)),
        })

    state_prev = prev_clean
    z_start = z
    descent = np.zeros_like(z)
    if cfg.guided_mode == "latent-descent" or not active:
        eps, g = evaluate(z)
        if active:
            for i in range(cfg.N):
                update = g.combined(eta, eta_sty) * obj
                step = 1.0
                z_new = z - update
                eps_new, g_new = evaluate(z_new)
                tries = 0
                while (tries < backtrack
                       and eta * g_new.semantic + eta_sty * g_new.style > eta * g.semantic + eta_sty * g.style):
                    step *= 0.5
                    z_new = z - step * update
                    eps_new, g_new = evaluate(z_new)
                    tries += 1
                record(i, g, step)
                z, eps, g = z_new, eps_new, g_new
            record(cfg.N, g, 0.0)
            descent = z - z_start
        out = denoise_step(TrajectoryState(index, z, state_prev), eps, s, cfg.solver_order)
        res, clean = out.latent, out.prev_clean
    elif cfg.guided_mode == "time-travel":
        for i in range(cfg.N):
            eps, g = evaluate(z)
            record(i, g)
            out = denoise_step(TrajectoryState(index, z, state_prev), eps, s, cfg.solver_order)
            update = g.combined(eta, eta_sty) * obj
            res = out.latent - update
            descent = descent - update
            clean = out.prev_clean
            if i < cfg.N - 1:
                eps_back = den.predict(res, index - 1, cond.prompt, s)
                z = invert_step(TrajectoryState(index - 1, res), eps_back, s).latent
    else:
        raise UnsupportedMode(f"unknown guided mode {cfg.guided_mode!r}")
    return GuidedResult(replace_outside(res, z_bg_next, obj), clean, report, descent)


@dataclass(frozen=True)
class GradCheckCase:
    case: int
    index: int
    rel_err_semantic: float
    rel_err_style: float

    @property
    def rel_err(self) -> float:
        return max(self.rel_err_semantic, self.rel_err_style)


def _rel(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def gradient_check(bundle: ModelBundle, s: NoiseSchedule, n_cases: int = 100, seed: int = 0,
                   fd_step: float = FD_STEP):
    """Frozen-eps analytic gradients against central differences.

    Cases are drawn at the bundle's image size: a smooth random background,
    a random user box, a random prompt and ``z_t = alpha z_0 + sigma eps``
    for a random clean latent.  Every latent coordinate is differenced.
    Yields one :class:`GradCheckCase` per case.
    """
    from .masks import Box

    rng = np.random.default_rng(seed)
    c, h, w = bundle.embedder.image_shape
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    for case in range(n_cases):
        phase = rng.uniform(0, 2 * np.pi, size=(c, 1, 1))
        freq = rng.uniform(2.0, 8.0, size=(c, 1, 1))
        x_bg = 0.5 + 0.4 * np.sin(freq * (xx + rng.uniform() * yy) * np.pi + phase)
        bw, bh = int(rng.integers(2, w // 2 + 1)), int(rng.integers(2, h // 2 + 1))
        box = Box(int(rng.integers(0, w - bw + 1)), int(rng.integers(0, h - bh + 1)), bw, bh)
        prompt = PromptSpec(f"gradcheck prompt {rng.integers(1 << 30)}")
        index = int(rng.integers(1, s.steps + 1))
        z0 = bundle.autoencoder.encode(rng.uniform(size=(c, h, w)))
        z_t = s.alpha[index] * z0 + s.sigma[index] * rng.standard_normal(z0.shape)
        cond = EnergyCondition(prompt, x_bg, box.mask((h, w)))
        eps = bundle.denoiser.predict(z_t, index, cond.prompt, s)
        ga = energy_gradient_terms(z_t, index, cond, bundle, s, "frozen-eps", eps_hat=eps)
        gf = energy_gradient_terms(z_t, index, cond, bundle, s, "finite-difference", eps_hat=eps, fd_step=fd_step)
        yield GradCheckCase(case, index, _rel(ga.grad_semantic, gf.grad_semantic),
                            _rel(ga.grad_style, gf.grad_style))
