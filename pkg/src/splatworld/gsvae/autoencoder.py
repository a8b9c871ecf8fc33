"""Per-image convolutional encoder / image decoder."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

LOGVAR_MIN, LOGVAR_MAX = -30.0, 20.0


@dataclass
class PosteriorStats:
    mean: torch.Tensor  # (..., C, h, w)
    logvar: torch.Tensor

    def __post_init__(self):
        self.logvar = self.logvar.clamp(LOGVAR_MIN, LOGVAR_MAX)


def _groups(ch):
    return math.gcd(8, ch)


class ResBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(ch), ch)
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(_groups(ch), ch)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x):
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class Encoder(nn.Module):
    def __init__(self, latent_channels=8, downsample=4, widths=(32, 64)):
        super().__init__()
        n_down = int(math.log2(downsample))
        if 2 ** n_down != downsample:
            raise ValueError("downsample must be a power of two")
        widths = list(widths) + [widths[-1]] * max(0, n_down - len(widths) + 1)
        layers = [nn.Conv2d(3, widths[0], 3, padding=1), ResBlock(widths[0])]
        for i in range(n_down):
            layers += [nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1), ResBlock(widths[i + 1])]
        layers += [nn.GroupNorm(_groups(widths[n_down]), widths[n_down]), nn.SiLU(),
                   nn.Conv2d(widths[n_down], 2 * latent_channels, 3, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class Decoder(nn.Module):
    def __init__(self, latent_channels=8, downsample=4, widths=(32, 64)):
        super().__init__()
        n_up = int(math.log2(downsample))
        widths = list(widths) + [widths[-1]] * max(0, n_up - len(widths) + 1)
        widths = widths[: n_up + 1][::-1]
        layers = [nn.Conv2d(latent_channels, widths[0], 3, padding=1), ResBlock(widths[0])]
        for i in range(n_up):
            layers += [nn.Upsample(scale_factor=2, mode="nearest"),
                       nn.Conv2d(widths[i], widths[i + 1], 3, padding=1), ResBlock(widths[i + 1])]
        layers += [nn.GroupNorm(_groups(widths[-1]), widths[-1]), nn.SiLU(), nn.Conv2d(widths[-1], 3, 3, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, z):
        return torch.sigmoid(self.net(z))


def _flatten_images(x):
    """(..., H, W, 3) channels-last images -> (N, 3, H, W) and the leading shape."""
    lead = x.shape[:-3]
    return x.reshape(-1, *x.shape[-3:]).permute(0, 3, 1, 2), lead


class ImageAutoencoder(nn.Module):
    def __init__(self, latent_channels=8, downsample=4, widths=(32, 64)):
        super().__init__()
        if downsample not in (4, 8):
            raise ValueError("downsample factor must be 4 or 8")
        if latent_channels not in (4, 8, 16):
            raise ValueError("latent channels must be 4, 8 or 16")
        self.latent_channels = latent_channels
        self.downsample = downsample
        self.encoder = Encoder(latent_channels, downsample, widths)
        self.decoder = Decoder(latent_channels, downsample, widths)

    def encode(self, images):
        """images (..., H, W, 3) in [0, 1] -> PosteriorStats with shape (..., C, h, w)."""
        if images.shape[-1] != 3:
            raise ValueError(f"expected channels-last RGB images, got shape {tuple(images.shape)}")
        H, W = images.shape[-3:-1]
        if H % self.downsample or W % self.downsample:
            raise ValueError(f"image size {H}x{W} not divisible by {self.downsample}")
        x, lead = _flatten_images(images)
        out = self.encoder(x)
        mean, logvar = out.chunk(2, dim=1)
        return PosteriorStats(mean.reshape(*lead, *mean.shape[1:]), logvar.reshape(*lead, *logvar.shape[1:]))

    def decode(self, z):
        """z (..., C, h, w) -> images (..., H, W, 3) in [0, 1]."""
        if z.shape[-3] != self.latent_channels:
            raise ValueError(f"expected {self.latent_channels} latent channels, got {z.shape[-3]}")
        lead = z.shape[:-3]
        x = self.decoder(z.reshape(-1, *z.shape[-3:]))
        return x.permute(0, 2, 3, 1).reshape(*lead, *x.shape[2:], 3)


def reparameterize(stats, seed=None, generator=None):
    if generator is None:
        generator = torch.Generator(device=stats.mean.device)
        generator.manual_seed(0 if seed is None else int(seed))
    eta = torch.randn(stats.mean.shape, generator=generator, dtype=stats.mean.dtype, device=stats.mean.device)
    return stats.mean + torch.exp(0.5 * stats.logvar) * eta
