"""Edge-map SSIM content score and a channel-statistics style proxy.

The style proxy stands in for a learned style discriminator; it is a
proxy and is labelled as such in every report.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import as_latent, masked_channel_stats
from .errors import ShapeMismatch
from .masks import MaskSet, bounding_box

LUMA = np.array([0.299, 0.587, 0.114])
SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T
# |Gx|, |Gy| <= 4 for luminance in [0, 1]
SOBEL_MAX = 4.0 * np.sqrt(2.0)

SSIM_WINDOW = 7
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


@dataclass(frozen=True)
class MetricsReport:
    ssim_bg: float
    ssim_fg: float
    content_similarity: float
    style_proxy: float

    def to_dict(self) -> dict:
        return asdict(self)


def luminance(x) -> np.ndarray:
    x = as_latent(x, "image")
    if x.shape[0] == 1:
        return x[0]
    if x.shape[0] != 3:
        raise ShapeMismatch(f"luminance needs 1 or 3 channels, got {x.shape[0]}")
    return np.tensordot(LUMA, x, axes=1)


def edge_map(x) -> np.ndarray:
    """Sobel magnitude of the luminance (edge-replicated borders), scaled to [0, 1]."""
    y = luminance(x)
    h, w = y.shape
    p = np.pad(y, 1, mode="edge")
    win = sliding_window_view(p, (3, 3))
    gx = np.einsum("hwij,ij->hw", win, SOBEL_X)
    gy = np.einsum("hwij,ij->hw", win, SOBEL_Y)
    return np.clip(np.hypot(gx, gy) / SOBEL_MAX, 0.0, 1.0)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b) -> float:
    """Mean SSIM over all valid 7x7 window positions (dynamic range 1).

    Inputs smaller than the window use the largest odd window that fits.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeMismatch(f"ssim needs equal 2-D inputs, got {a.shape} and {b.shape}")
    size = min(SSIM_WINDOW, *a.shape)
    size -= 1 - size % 2
    win = gaussian_window(size)

    def filt(img):
        return np.einsum("hwij,ij->hw", sliding_window_view(img, (size, size)), win)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    c1, c2 = K1**2, K2**2
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return float(np.clip(s.mean(), -1.0, 1.0))


def combine_content(ssim_bg: float, ssim_fg: float) -> float:
    return (1.0 + ssim_bg) * (1.0 + ssim_fg) / 4.0


def content_similarity(x_res, x_bg, x_fg_aligned, masks: MaskSet) -> tuple[float, float, float]:
    """Returns ``(S, ssim_bg, ssim_fg)``."""
    e_res, e_bg, e_fg = edge_map(x_res), edge_map(x_bg), edge_map(x_fg_aligned)
    box = bounding_box(masks.user)
    rows, cols = box.slices()
    ssim_fg = ssim(e_res[rows, cols], e_fg[rows, cols])
    keep = masks.background
    ssim_bg = ssim(e_res * keep, e_bg * keep)
    return combine_content(ssim_bg, ssim_fg), ssim_bg, ssim_fg


def style_proxy(x_res, masks: MaskSet, x_bg) -> float:
    """``1 / (1 + d)`` with ``d`` the distance between (mean, std) channel stats
    of the object region of ``x_res`` and of the whole background image."""
    x_bg = as_latent(x_bg, "background")
    ours = masked_channel_stats(x_res, masks.object).vector()
    theirs = masked_channel_stats(x_bg, np.ones(x_bg.shape[1:])).vector()
    return float(1.0 / (1.0 + np.linalg.norm(ours - theirs)))


def saturation(x, mask) -> float:
    """Spread of per-channel means inside ``mask`` (0 for a gray region)."""
    m = masked_channel_stats(x, mask).mean
    return float(m.max() - m.min())


def evaluate(x_res, x_bg, x_fg_aligned, masks: MaskSet) -> MetricsReport:
    s, sb, sf = content_similarity(x_res, x_bg, x_fg_aligned, masks)
    return MetricsReport(ssim_bg=sb, ssim_fg=sf, content_similarity=s, style_proxy=style_proxy(x_res, masks, x_bg))
