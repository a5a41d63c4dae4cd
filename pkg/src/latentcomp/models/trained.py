"""Small convolutional noise predictor trained by denoising score matching.

Weights file layout (little-endian)::

    b"LCMP-TOY"                     8-byte magic
    u8   version                    currently 1
    u32  n_layers
    n_layers x (u32 out, u32 in, u32 kh, u32 kw)
    per layer: float32 weight[out*in*kh*kw], float32 bias[out]

Version 1 networks are 3x3 reflect-padded convolutions with SiLU between
layers; the input is the latent plus constant ``sigma_t`` and ``alpha_t``
planes.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..core import as_latent
from ..errors import EmptyDataset, NonfiniteLoss
from ..imageio import atomic_write_bytes
from ..masks import place_object
from ..schedule import continuous_alpha_sigma
from .toy import LinearAutoencoder

logger = logging.getLogger(__name__)

MAGIC = b"LCMP-TOY"
VERSION = 1
COND_PLANES = 2


class _ConvNet(nn.Module):
    def __init__(self, dims: list[tuple[int, int]]):
        super().__init__()
        self.layers = nn.ModuleList(
            nn.Conv2d(cin, cout, 3, padding=1, padding_mode="reflect") for cin, cout in dims
        )

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = nn.functional.silu(x)
        return x


def _layer_dims(channels: int, hidden: int, depth: int) -> list[tuple[int, int]]:
    dims = [(channels + COND_PLANES, hidden)]
    dims += [(hidden, hidden)] * (depth - 2)
    dims.append((hidden, channels))
    return dims


def _net_input(z: torch.Tensor, alpha: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    b, _, h, w = z.shape
    planes = torch.stack([sigma, alpha], dim=1)[:, :, None, None].expand(b, COND_PLANES, h, w)
    return torch.cat([z, planes], dim=1)


class ConvDenoiser:
    """Numpy-facing wrapper; inference runs in float64."""

    def __init__(self, net: _ConvNet):
        self.net = net.double().eval()
        for p in self.net.parameters():
            p.requires_grad_(False)

    @property
    def channels(self) -> int:
        return self.net.layers[-1].out_channels

    def _eval(self, z, index, schedule, requires_grad=False):
        zt = torch.from_numpy(np.ascontiguousarray(as_latent(z)))[None].requires_grad_(requires_grad)
        a = torch.tensor([schedule.alpha[index]], dtype=torch.float64)
        s = torch.tensor([schedule.sigma[index]], dtype=torch.float64)
        return zt, self.net(_net_input(zt, a, s))

    def predict(self, z, index, cond, schedule):
        with torch.no_grad():
            _, out = self._eval(z, index, schedule)
        return out[0].numpy()

    def vjp(self, z, index, cond, schedule, v):
        with torch.enable_grad():
            zt, out = self._eval(z, index, schedule, requires_grad=True)
            (g,) = torch.autograd.grad(out, zt, grad_outputs=torch.from_numpy(np.asarray(v, dtype=np.float64))[None])
        return g[0].numpy()

    def weights_float32(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(layer.weight.detach().float().numpy(), layer.bias.detach().float().numpy())
                for layer in self.net.layers]


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 400
    batch_size: int = 32
    lr: float = 2e-3
    hidden: int = 32
    depth: int = 4
    schedule_kind: str = "cosine"
    u_min: float = 1e-3


@dataclass
class TrainResult:
    denoiser: ConvDenoiser
    losses: list[float]


def training_latents(dataset, autoencoder=None) -> np.ndarray:
    """Background, raw foreground and box-aligned foreground latents per sample."""
    ae = autoencoder or LinearAutoencoder(2)
    lat = []
    for s in dataset:
        aligned, _ = place_object(s.foreground, s.object_mask, s.user_box, s.background.shape[1:])
        lat += [ae.encode(s.background), ae.encode(s.foreground), ae.encode(aligned)]
    return np.stack(lat)


def _run_epochs(net, data, cfg: TrainConfig) -> list[float]:
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    n = data.shape[0]
    losses = []
    for epoch in range(cfg.epochs):
        perm = torch.randperm(n, generator=gen)
        total, count = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            x0 = data[perm[start:start + cfg.batch_size]]
            b = x0.shape[0]
            u = cfg.u_min + (1 - cfg.u_min) * torch.rand(b, generator=gen, dtype=torch.float64)
            a_np, s_np = continuous_alpha_sigma(u.numpy(), cfg.schedule_kind)
            a = torch.from_numpy(a_np).float()
            s = torch.from_numpy(s_np).float()
            eps = torch.randn(x0.shape, generator=gen)
            zt = a[:, None, None, None] * x0 + s[:, None, None, None] * eps
            loss = torch.mean((net(_net_input(zt, a, s)) - eps) ** 2)
            if not torch.isfinite(loss):
                raise NonfiniteLoss(f"loss became {loss.item()} at epoch {epoch}, batch starting {start}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * b
            count += b
        losses.append(total / count)
        if epoch % 100 == 0:
            logger.debug("epoch %d loss %.5f", epoch, losses[-1])
    return losses


def train_toy_denoiser(dataset, cfg: TrainConfig = TrainConfig(), autoencoder=None) -> TrainResult:
    """Train a :class:`ConvDenoiser` on the dataset's background and object latents.

    Runs single-threaded so that a fixed seed gives bit-identical weights.
    """
    if len(dataset) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    data = torch.from_numpy(training_latents(dataset, autoencoder)).float()
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        torch.manual_seed(cfg.seed)
        net = _ConvNet(_layer_dims(data.shape[1], cfg.hidden, cfg.depth))
        losses = _run_epochs(net, data, cfg)
    finally:
        torch.set_num_threads(threads)
    return TrainResult(ConvDenoiser(net), losses)


def untrained_denoiser(channels: int = 3, cfg: TrainConfig = TrainConfig()) -> ConvDenoiser:
    torch.manual_seed(cfg.seed)
    return ConvDenoiser(_ConvNet(_layer_dims(channels, cfg.hidden, cfg.depth)))


def save_weights(den: ConvDenoiser, path) -> None:
    layers = den.weights_float32()
    buf = bytearray(MAGIC)
    buf += struct.pack("<BI", VERSION, len(layers))
    for w, _ in layers:
        buf += struct.pack("<4I", *w.shape)
    for w, b in layers:
        buf += w.astype("<f4").tobytes()
        buf += b.astype("<f4").tobytes()
    atomic_write_bytes(path, bytes(buf))


def load_weights(path) -> ConvDenoiser:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a toy-denoiser weights file")
    version, n = struct.unpack_from("<BI", raw, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported weights version {version}")
    off = 13
    shapes = []
    for _ in range(n):
        shapes.append(struct.unpack_from("<4I", raw, off))
        off += 16
    net = _ConvNet([(cin, cout) for cout, cin, _, _ in shapes])
    with torch.no_grad():
        for layer, shape in zip(net.layers, shapes):
            size = int(np.prod(shape))
            w = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape)
            off += 4 * size
            b = np.frombuffer(raw, dtype="<f4", count=shape[0], offset=off)
            off += 4 * shape[0]
            layer.weight.copy_(torch.from_numpy(w.copy()))
            layer.bias.copy_(torch.from_numpy(b.copy()))
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    return ConvDenoiser(net)
