"""Transformer decoder from context-frame latents to pixel-aligned Gaussians."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.utils.checkpoint import checkpoint

from ..splatcore import (DecodeConfig, GaussianSet, PixelGaussianGrid, apply_exposure, composite_sky,
                         decode_raw, rasterize, transport)

N_OUT = 15  # 12 Gaussian channels + 3 velocity


def timestep_features(t, dim, max_period=100.0):
    """Sinusoidal features of real-valued times (seconds or flow time)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=t.dtype, device=t.device) / half)
    args = t[..., None] * freqs * 2 * math.pi
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class Attention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, key_mask=None):
        B, N, D = x.shape
        q, k, v = self.qkv(x).reshape(B, N, 3, self.heads, D // self.heads).permute(2, 0, 3, 1, 4)
        mask = None if key_mask is None else key_mask[:, None, None, :]
        out = F.scaled_dot_product_attention(q, k, v, attn_mask=mask)
        return self.proj(out.transpose(1, 2).reshape(B, N, D))


class Block(nn.Module):
    def __init__(self, dim, heads, mlp_ratio=4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_ratio * dim), nn.GELU(), nn.Linear(mlp_ratio * dim, dim))

    def forward(self, x, key_mask=None):
        x = x + self.attn(self.norm1(x), key_mask)
        return x + self.mlp(self.norm2(x))


@dataclass
class GsDecoderOutput:
    grids: list  # per context (t, v): PixelGaussianGrid, or None for masked views
    sky_color: torch.Tensor  # (3,)
    exposure: torch.Tensor  # (V, 2) gain, bias per target view


class GaussianDecoder(nn.Module):
    def __init__(self, latent_channels=8, downsample=4, patch=2, dim=256, depth=6, heads=8,
                 max_views=6, latent_hw=(16, 16), decode=None):
        super().__init__()
        self.latent_channels = latent_channels
        self.downsample = downsample
        self.patch = patch
        self.dim = dim
        self.max_views = max_views
        self.decode_cfg = decode or DecodeConfig()
        self.latent_hw = tuple(latent_hw)
        self.patch_embed = nn.Conv2d(latent_channels, dim, patch, stride=patch)
        gh, gw = latent_hw[0] // patch, latent_hw[1] // patch
        self.pos_embed = nn.Parameter(torch.randn(1, dim, gh, gw) * 0.02)
        self.view_embed = nn.Embedding(max_views, dim)
        nn.init.normal_(self.view_embed.weight, std=0.02)
        self.time_mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))
        self.sky_token = nn.Parameter(torch.randn(1, 1, dim) * 0.02)
        self.exposure_tokens = nn.Parameter(torch.randn(1, max_views, dim) * 0.02)
        self.blocks = nn.ModuleList(Block(dim, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)
        up = patch * downsample
        self.head = nn.Linear(dim, up * up * N_OUT)
        self.sky_head = nn.Linear(dim, 3)
        self.exposure_head = nn.Linear(dim, 2)
        self._init_heads()

    def _init_heads(self):
        cfg = self.decode_cfg
        bias = torch.zeros(N_OUT)
        # start near 10 m depth, ~0.1 m scale, fairly opaque, identity rotation
        bias[0] = math.log((10.0 - cfg.near) / (cfg.far - 10.0))
        bias[1] = 1.0
        bias[5:8] = math.log(0.1)
        bias[8] = 2.0
        up = self.patch * self.downsample
        with torch.no_grad():
            self.head.weight.mul_(0.1)
            self.head.bias.copy_(bias.repeat(up * up))
            nn.init.zeros_(self.exposure_head.weight)
            nn.init.zeros_(self.exposure_head.bias)

    def _pos(self, gh, gw):
        if (gh, gw) == tuple(self.pos_embed.shape[-2:]):
            return self.pos_embed
        return F.interpolate(self.pos_embed, size=(gh, gw), mode="bilinear", align_corners=False)

    def forward(self, z, times, view_mask=None):
        """z (B, Tc, V, C, h, w), times (B, Tc) seconds, view_mask (B, V) bool.

        Returns raw per-pixel channels (B, Tc, V, H, W, 15), sky (B, 3), exposure (B, V, 2).
        """
        B, Tc, V, C, h, w = z.shape
        if view_mask is None:
            view_mask = torch.ones(B, V, dtype=torch.bool, device=z.device)
        if not view_mask.any(dim=1).all():
            raise ValueError("gs_decode needs at least one valid view per sample")
        # masked views are zeroed so their content cannot reach any output
        z = torch.where(view_mask[:, None, :, None, None, None], z, torch.zeros((), dtype=z.dtype, device=z.device))
        p = self.patch
        gh, gw = h // p, w // p
        x = self.patch_embed(z.reshape(B * Tc * V, C, h, w)) + self._pos(gh, gw)
        x = x.reshape(B, Tc, V, self.dim, gh * gw).permute(0, 1, 2, 4, 3)
        x = x + self.view_embed(torch.arange(V, device=z.device))[None, None, :, None, :]
        x = x + self.time_mlp(timestep_features(times.to(x.dtype), self.dim))[:, :, None, None, :]
        n_ctx = Tc * V * gh * gw
        x = x.reshape(B, n_ctx, self.dim)
        aux = torch.cat([self.sky_token.expand(B, -1, -1), self.exposure_tokens[:, :V].expand(B, -1, -1)], 1)
        x = torch.cat([x, aux], dim=1)
        tok_mask = view_mask[:, None, :, None].expand(B, Tc, V, gh * gw).reshape(B, n_ctx)
        key_mask = torch.cat([tok_mask, torch.ones(B, aux.shape[1], dtype=torch.bool, device=z.device)], 1)
        for blk in self.blocks:
            x = blk(x, key_mask)
        x = self.norm(x)
        up = p * self.downsample
        raw = self.head(x[:, :n_ctx]).reshape(B, Tc, V, gh, gw, up, up, N_OUT)
        raw = raw.permute(0, 1, 2, 3, 5, 4, 6, 7).reshape(B, Tc, V, gh * up, gw * up, N_OUT)
        sky = torch.sigmoid(self.sky_head(x[:, n_ctx]))
        exposure = self.exposure_head(x[:, n_ctx + 1:])
        exposure = torch.stack([1.0 + exposure[..., 0], exposure[..., 1]], -1)
        return raw, sky, exposure


def gs_decode(decoder, z_context, cameras, times, view_mask=None):
    """Decode one sample's context latents (Tc, V, C, h, w) into a GsDecoderOutput."""
    Tc, V = z_context.shape[:2]
    times_t = torch.as_tensor(times, dtype=z_context.dtype, device=z_context.device)
    rel = (times_t - times_t.min())[None]
    vm = None if view_mask is None else torch.as_tensor(view_mask, dtype=torch.bool, device=z_context.device)[None]
    raw, sky, exposure = decoder(z_context[None], rel, vm)
    grids = []
    for ti in range(Tc):
        row = []
        for v in range(V):
            if vm is not None and not bool(vm[0, v]):
                row.append(None)
                continue
            r = raw[0, ti, v]
            row.append(PixelGaussianGrid(r[..., :12], r[..., 12:], cameras[ti][v], float(times[ti])))
        grids.append(row)
    return GsDecoderOutput(grids, sky[0], exposure[0])


def gaussians_from_output(out, decode_cfg=None):
    sets = [decode_raw(g, decode_cfg) for row in out.grids for g in row if g is not None]
    return GaussianSet.cat(sets)


def render_targets(out, target_cameras, target_times, decode_cfg=None, alpha_eps=None, gaussians=None):
    """Render every (target time, view); returns (rgb (Tt, V, H, W, 3), list of RenderOutput rows)."""
    g = gaussians if gaussians is not None else gaussians_from_output(out, decode_cfg)
    kw = {} if alpha_eps is None else {"alpha_eps": alpha_eps}
    rgbs, outs = [], []
    for ti, t in enumerate(target_times):
        gt = transport(g, t)
        row_rgb, row_out = [], []
        for v, cam in enumerate(target_cameras[ti]):
            if torch.is_grad_enabled():
                # recompute each render in backward so only one view's pair tensors are alive at a time
                r = checkpoint(rasterize, gt, cam, use_reentrant=False, **kw)
            else:
                r = rasterize(gt, cam, **kw)
            rgb = composite_sky(r, out.sky_color)
            gain, bias = out.exposure[v]
            row_rgb.append(apply_exposure(rgb, gain, bias))
            row_out.append(r)
        rgbs.append(torch.stack(row_rgb))
        outs.append(row_out)
    return torch.stack(rgbs), outs
