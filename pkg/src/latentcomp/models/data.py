"""Synthetic two-domain benchmark: grayscale stripes and coloured objects."""

from __future__ import annotations

import colorsys
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import substream_seed
from ..imageio import atomic_write_bytes, read_mask, read_ppm, write_mask, write_ppm
from ..masks import Box
from .base import PromptSpec

CANVAS = (32, 32)
SHAPES = ("square", "disc", "diamond")
_HUES = [(0.0, "red"), (0.08, "orange"), (0.16, "yellow"), (0.33, "green"),
         (0.5, "cyan"), (0.6, "blue"), (0.78, "purple"), (0.9, "pink")]


@dataclass(frozen=True)
class ToySample:
    id: str
    background: np.ndarray  # (3, H, W) in [0, 1]
    foreground: np.ndarray  # (3, H, W) in [0, 1]
    object_mask: np.ndarray  # (H, W) 0/1, foreground coordinates
    user_box: Box  # canvas coordinates
    prompt: PromptSpec


@dataclass(frozen=True)
class ToyDataset:
    samples: tuple[ToySample, ...]
    seed: int

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def digest(self) -> str:
        h = hashlib.sha256(str(self.seed).encode())
        for s in self.samples:
            h.update(s.id.encode())
            for a in (s.background, s.foreground, s.object_mask):
                h.update(np.ascontiguousarray(a).tobytes())
            h.update(str(s.user_box).encode())
            h.update(s.prompt.text.encode())
        return h.hexdigest()


def _stripes(rng, canvas):
    H, W = canvas
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    orient = rng.integers(3)
    coord = (yy, xx, (xx + yy) / np.sqrt(2))[orient]
    period = rng.uniform(5.0, 10.0)
    lo = rng.uniform(0.15, 0.45)
    hi = rng.uniform(lo + 0.25, 0.9)
    wave = 0.5 + 0.5 * np.tanh(3.0 * np.sin(2 * np.pi * coord / period + rng.uniform(0, 2 * np.pi)))
    gray = lo + (hi - lo) * wave
    return np.repeat(gray[None], 3, axis=0)


def _shape_mask(kind, cy, cx, r, canvas):
    H, W = canvas
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64) + 0.5
    dy, dx = yy - cy, xx - cx
    if kind == "square":
        m = (np.abs(dy) <= r) & (np.abs(dx) <= r)
    elif kind == "disc":
        m = dy**2 + dx**2 <= r**2
    else:
        m = np.abs(dy) + np.abs(dx) <= r * 1.3
    return m.astype(np.float64)


def _object_image(rng, canvas):
    H, W = canvas
    hue, name = _HUES[rng.integers(len(_HUES))]
    hue = (hue + rng.uniform(-0.03, 0.03)) % 1.0
    sat = rng.uniform(0.6, 0.85)
    base = np.array(colorsys.hsv_to_rgb(hue, sat, rng.uniform(0.7, 0.9)))
    dark = np.array(colorsys.hsv_to_rgb(hue, sat, rng.uniform(0.35, 0.5)))
    kind = SHAPES[rng.integers(len(SHAPES))]
    r = rng.uniform(5.0, 8.0)
    cy, cx = rng.uniform(r + 1, H - r - 1), rng.uniform(r + 1, W - r - 1)
    mask = _shape_mask(kind, cy, cx, r, canvas)
    # two-tone checker texture gives the object edges worth preserving
    yy, xx = np.mgrid[0:H, 0:W]
    cell = int(rng.integers(3, 5))
    checker = ((yy // cell + xx // cell) % 2).astype(np.float64)
    colour = base[:, None, None] * (1 - checker) + dark[:, None, None] * checker
    backdrop = np.full((3, H, W), rng.uniform(0.85, 0.95))
    img = colour * mask + backdrop * (1 - mask)
    return img, mask, kind, name


def make_toy_domains(seed: int, n: int, canvas: tuple[int, int] = CANVAS) -> ToyDataset:
    if n < 1:
        raise ValueError("need n >= 1 samples")
    rng = np.random.default_rng(substream_seed(seed, "dataset"))
    H, W = canvas
    samples = []
    for i in range(n):
        bg = _stripes(rng, canvas)
        fg, mask, kind, colour = _object_image(rng, canvas)
        bw, bh = int(rng.integers(12, 19)), int(rng.integers(12, 19))
        bx, by = int(rng.integers(0, W - bw + 1)), int(rng.integers(0, H - bh + 1))
        article = "an" if colour[0] in "aeiou" else "a"
        prompt = PromptSpec(f"{article} {colour} {kind} on a striped background", class_tag=kind)
        samples.append(ToySample(f"s{i:03d}", bg, fg, mask, Box(bx, by, bw, bh), prompt))
    return ToyDataset(tuple(samples), int(seed))


def save_dataset(ds: ToyDataset, out_dir) -> Path:
    """Write PPM/PGM files plus ``dataset.json`` (8-bit quantised)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for s in ds:
        write_ppm(out / f"{s.id}_bg.ppm", s.background)
        write_ppm(out / f"{s.id}_fg.ppm", s.foreground)
        write_mask(out / f"{s.id}_mask.pgm", s.object_mask)
        index.append({"id": s.id, "bg": f"{s.id}_bg.ppm", "fg": f"{s.id}_fg.ppm", "obj_mask": f"{s.id}_mask.pgm",
                      "user_box": str(s.user_box), "prompt": s.prompt.text, "class_tag": s.prompt.class_tag})
    meta = {"seed": ds.seed, "n": len(ds), "digest": ds.digest(), "samples": index}
    atomic_write_bytes(out / "dataset.json", json.dumps(meta, indent=2).encode())
    return out / "dataset.json"


def load_dataset(path) -> ToyDataset:
    """Read a directory written by :func:`save_dataset` (or its ``dataset.json``)."""
    path = Path(path)
    root = path if path.is_dir() else path.parent
    meta = json.loads((root / "dataset.json").read_text())
    samples = tuple(
        ToySample(e["id"], read_ppm(root / e["bg"]), read_ppm(root / e["fg"]), read_mask(root / e["obj_mask"]),
                  Box.parse(e["user_box"]), PromptSpec(e["prompt"], e.get("class_tag")))
        for e in meta["samples"]
    )
    return ToyDataset(samples, int(meta.get("seed", 0)))
