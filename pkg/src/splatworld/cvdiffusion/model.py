"""Multi-view video diffusion transformer over latent grids (B, T, V, C, h, w)."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..synthworld.scene import TOKEN, VOCAB
from .blocks import AxisBlock

N_CONTROL = 2  # box raster, lane raster
NULL_TOKEN = TOKEN["<null>"]
PAD_TOKEN = TOKEN["<pad>"]


@dataclass
class DiffusionConfig:
    latent_channels: int = 8
    latent_hw: tuple = (16, 16)
    patch: int = 2
    dim: int = 192
    units: int = 4
    heads: int = 6
    mlp_ratio: int = 4
    max_frames: int = 19
    vocab_size: int = len(VOCAB)
    p_temporal: float = 0.1
    p_crossview: float = 0.1
    p_uncond: float = 0.1
    t_dist: str = "uniform"


@dataclass
class ConditionBundle:
    text_tokens: torch.Tensor  # (B, L) long
    control: torch.Tensor  # (B, T, V, 2, h, w)
    ref_mask: torch.Tensor  # (B, T) bool, True = clean reference frame
    view_mask: torch.Tensor = None  # (B, V) bool

    def __post_init__(self):
        if self.ref_mask.shape[1] != self.control.shape[1]:
            raise ValueError("reference mask length must equal the number of frames")
        if self.view_mask is None:
            B, V = self.control.shape[0], self.control.shape[2]
            self.view_mask = torch.ones(B, V, dtype=torch.bool, device=self.control.device)

    def frames(self, sl):
        return replace(self, control=self.control[:, sl], ref_mask=self.ref_mask[:, sl])

    def with_refs(self, k):
        ref = torch.zeros_like(self.ref_mask)
        ref[:, :k] = True
        return replace(self, ref_mask=ref)

    def null(self):
        """Unconditional counterpart: null text and empty control."""
        tokens = torch.full_like(self.text_tokens[:, :1], NULL_TOKEN)
        return replace(self, text_tokens=tokens, control=torch.zeros_like(self.control))


@dataclass
class BlockMask:
    spatial: bool = True
    temporal: bool = True
    crossview: bool = True


def time_features(t, dim, max_period=10000.0):
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=t.dtype, device=t.device) / half)
    args = 1000.0 * t[:, None] * freqs
    return torch.cat([torch.cos(args), torch.sin(args)], -1)


class VideoDiT(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = cfg = config or DiffusionConfig()
        C, p, D = cfg.latent_channels, cfg.patch, cfg.dim
        self.in_channels = C + N_CONTROL + 1
        self.patch_embed = nn.Conv2d(self.in_channels, D, p, stride=p)
        gh, gw = cfg.latent_hw[0] // p, cfg.latent_hw[1] // p
        self.pos_embed = nn.Parameter(torch.randn(1, D, gh, gw) * 0.02)
        self.time_mlp = nn.Sequential(nn.Linear(D, D), nn.SiLU(), nn.Linear(D, D))
        self.text_embed = nn.Embedding(cfg.vocab_size, D)
        nn.init.normal_(self.text_embed.weight, std=0.02)
        self.units = nn.ModuleList(
            nn.ModuleList(AxisBlock(kind, D, cfg.heads, cfg.mlp_ratio, cfg.max_frames)
                          for kind in ("spatial", "temporal", "crossview"))
            for _ in range(cfg.units))
        self.final_norm = nn.LayerNorm(D, elementwise_affine=False, eps=1e-6)
        self.final_ada = nn.Sequential(nn.SiLU(), nn.Linear(D, 2 * D))
        self.final = nn.Linear(D, p * p * C)
        for lin in (self.final_ada[1], self.final):
            nn.init.zeros_(lin.weight)
            nn.init.zeros_(lin.bias)

    def embed_text(self, tokens):
        e = self.text_embed(tokens)
        keep = (tokens != PAD_TOKEN).to(e.dtype)[..., None]
        return (e * keep).sum(1) / keep.sum(1).clamp_min(1.0)

    def _pos(self, gh, gw):
        if (gh, gw) == tuple(self.pos_embed.shape[-2:]):
            return self.pos_embed
        return F.interpolate(self.pos_embed, size=(gh, gw), mode="bilinear", align_corners=False)

    def forward(self, z_t, t, cond, blocks=None):
        """z_t (B, T, V, C, h, w), t (B,) in (0, 1) -> prediction of z0 - eps, same shape."""
        blocks = blocks or BlockMask()
        B, T, V, C, h, w = z_t.shape
        t = torch.as_tensor(t, dtype=z_t.dtype, device=z_t.device).reshape(-1).expand(B)
        if not ((t > 0) & (t < 1)).all():
            raise ValueError("flow time must lie strictly inside (0, 1)")
        p, D = self.config.patch, self.config.dim
        if h % p or w % p:
            raise ValueError(f"latent size {h}x{w} not divisible by patch {p}")
        ref = cond.ref_mask.to(z_t.dtype)[:, :, None, None, None, None].expand(B, T, V, 1, h, w)
        x = torch.cat([z_t, cond.control.to(z_t.dtype), ref], dim=3)
        gh, gw = h // p, w // p
        x = self.patch_embed(x.reshape(B * T * V, self.in_channels, h, w)) + self._pos(gh, gw)
        x = x.reshape(B, T, V, D, gh * gw).transpose(3, 4)
        c = self.time_mlp(time_features(t, D)) + self.embed_text(cond.text_tokens)

        vm = cond.view_mask
        multi = vm.sum(1) > 1  # single-view samples skip cross-view attention
        use_cross = blocks.crossview and V > 1 and bool(multi.any())
        for spatial, temporal, crossview in self.units:
            if blocks.spatial:
                x = spatial(x, c)
            if blocks.temporal:
                x = temporal(x, c)
            if use_cross:
                y = crossview(x, c, vm)
                x = y if bool(multi.all()) else torch.where(multi[:, None, None, None, None], y, x)

        sh, sc = self.final_ada(c).chunk(2, -1)
        xf = self.final_norm(x) * (1 + sc[:, None, None, None]) + sh[:, None, None, None]
        out = self.final(xf).reshape(B, T, V, gh, gw, p, p, C)
        return out.permute(0, 1, 2, 7, 3, 5, 4, 6).reshape(B, T, V, C, h, w)

    def config_dict(self):
        return asdict(self.config)


def control_from_rasters(box_raster, lane_raster, latent_hw):
    """Area-downsample (T, V, H, W, 1) condition rasters to (T, V, 2, h, w)."""
    box = torch.as_tensor(box_raster, dtype=torch.float32)
    lane = torch.as_tensor(lane_raster, dtype=torch.float32)
    x = torch.cat([box, lane], -1)
    T, V, H, W, _ = x.shape
    x = x.reshape(T * V, H, W, 2).permute(0, 3, 1, 2)
    x = F.adaptive_avg_pool2d(x, latent_hw)
    return x.reshape(T, V, 2, *latent_hw)
