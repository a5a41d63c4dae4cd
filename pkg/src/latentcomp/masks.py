"""Object placement and mask algebra at pixel and latent resolution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_dilation

from .core import as_latent, as_mask
from .errors import BoxOutOfCanvas, EmptyObjectMask, ObjectOutsideUserBox, ShapeMismatch


@dataclass(frozen=True)
class Box:
    x: int
    y: int
    w: int
    h: int

    @classmethod
    def parse(cls, text: str) -> "Box":
        parts = [p.strip() for p in str(text).split(",")]
        if len(parts) != 4:
            raise ValueError(f"user box must be 'x,y,w,h', got {text!r}")
        return cls(*(int(p) for p in parts))

    def __str__(self):
        return f"{self.x},{self.y},{self.w},{self.h}"

    def check(self, canvas: tuple[int, int]) -> None:
        H, W = canvas
        if self.w < 1 or self.h < 1 or self.x < 0 or self.y < 0 or self.x + self.w > W or self.y + self.h > H:
            raise BoxOutOfCanvas(f"box {self} does not fit a {H}x{W} canvas")

    def mask(self, canvas: tuple[int, int]) -> np.ndarray:
        self.check(canvas)
        m = np.zeros(canvas)
        m[self.y:self.y + self.h, self.x:self.x + self.w] = 1.0
        return m

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.y + self.h), slice(self.x, self.x + self.w)


def _src_coords(n_out: int, n_in: int) -> np.ndarray:
    # half-pixel centres, clamped to the valid range
    return np.clip((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0, n_in - 1)


def resize_bilinear(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    c, h, w = img.shape
    oh, ow = size
    ys, xs = _src_coords(oh, h), _src_coords(ow, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def resize_nearest(mask: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = mask.shape
    oh, ow = size
    ys = np.minimum(((np.arange(oh) + 0.5) * h / oh).astype(int), h - 1)
    xs = np.minimum(((np.arange(ow) + 0.5) * w / ow).astype(int), w - 1)
    return mask[ys][:, xs]


def bounding_box(mask: np.ndarray) -> Box:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise EmptyObjectMask("object mask is empty")
    return Box(int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))


def place_object(fg, obj_mask, user_box: Box, canvas: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Aspect-fit the object's tight crop into ``user_box``, centred.

    Returns the aligned foreground (zero outside the placed object) and the
    aligned object mask, both on a ``canvas``-sized grid.
    """
    fg = as_latent(fg, "foreground")
    obj_mask = as_mask(obj_mask, fg.shape[1:], "object mask")
    if isinstance(user_box, str):
        user_box = Box.parse(user_box)
    user_box.check(canvas)
    bb = bounding_box(obj_mask)
    crop = fg[:, bb.y:bb.y + bb.h, bb.x:bb.x + bb.w]
    crop_mask = obj_mask[bb.y:bb.y + bb.h, bb.x:bb.x + bb.w]
    scale = min(user_box.w / bb.w, user_box.h / bb.h)
    nw = min(user_box.w, max(1, int(round(bb.w * scale))))
    nh = min(user_box.h, max(1, int(round(bb.h * scale))))
    if (nh, nw) == (bb.h, bb.w):
        img, m = crop, crop_mask
    else:
        img, m = resize_bilinear(crop, (nh, nw)), resize_nearest(crop_mask, (nh, nw))
    ox = user_box.x + (user_box.w - nw) // 2
    oy = user_box.y + (user_box.h - nh) // 2
    aligned_mask = np.zeros(canvas)
    aligned_mask[oy:oy + nh, ox:ox + nw] = m
    aligned = np.zeros((fg.shape[0],) + tuple(canvas))
    aligned[:, oy:oy + nh, ox:ox + nw] = img * m
    return aligned, aligned_mask


@dataclass(frozen=True)
class MaskSet:
    user: np.ndarray
    object: np.ndarray
    background: np.ndarray
    transition: np.ndarray
    latent_user: np.ndarray
    latent_object: np.ndarray
    latent_background: np.ndarray
    latent_transition: np.ndarray
    factor: int = 2

    @property
    def shape(self) -> tuple[int, int]:
        return self.user.shape

    @property
    def latent_shape(self) -> tuple[int, int]:
        return self.latent_user.shape


def downsample_mask(m: np.ndarray, f: int) -> np.ndarray:
    """Nearest-neighbour pick of each ``f x f`` block's centre pixel."""
    h, w = m.shape
    if h % f or w % f:
        raise ShapeMismatch(f"mask dims {m.shape} not divisible by {f}")
    return m[f // 2::f, f // 2::f].copy()


def build_mask_set(user, object_aligned, f: int = 2, dilation: int = 0) -> MaskSet:
    user = as_mask(user, name="user mask")
    obj = as_mask(object_aligned, user.shape, "object mask")
    if np.any(obj > user):
        raise ObjectOutsideUserBox("object mask extends outside the user mask")
    lu = downsample_mask(user, f)
    lo = downsample_mask(obj, f)
    if dilation > 0:
        lo = (binary_dilation(lo > 0, iterations=int(dilation)) & (lu > 0)).astype(np.float64)
    ms = MaskSet(
        user=user,
        object=obj,
        background=1.0 - user,
        transition=np.logical_xor(user > 0, obj > 0).astype(np.float64),
        latent_user=lu,
        latent_object=lo,
        latent_background=1.0 - lu,
        latent_transition=np.logical_xor(lu > 0, lo > 0).astype(np.float64),
        factor=f,
    )
    for a in (ms.user, ms.object, ms.background, ms.transition,
              ms.latent_user, ms.latent_object, ms.latent_background, ms.latent_transition):
        a.setflags(write=False)
    return ms
