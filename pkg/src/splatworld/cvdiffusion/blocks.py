"""adaLN-Zero transformer blocks for the spatial, temporal and cross-view axes."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .reshape import from_crossview, from_spatial, from_temporal, to_crossview, to_spatial, to_temporal

KINDS = ("spatial", "temporal", "crossview")


def modulate(x, shift, scale):
    return x * (1 + scale[:, None]) + shift[:, None]


class SelfAttention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        if dim % heads:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, key_mask=None):
        B, N, D = x.shape
        q, k, v = self.qkv(x).reshape(B, N, 3, self.heads, D // self.heads).permute(2, 0, 3, 1, 4)
        mask = None if key_mask is None else key_mask[:, None, None, :]
        out = F.scaled_dot_product_attention(q, k, v, attn_mask=mask)
        return self.proj(out.transpose(1, 2).reshape(B, N, D))


class AxisBlock(nn.Module):
    """Pre-norm attention + MLP over one axis of the (B, T, V, N, D) token grid.

    Scale, shift and gate come from the conditioning embedding.  The modulation
    layer starts at zero so a fresh block is an exact identity.  Temporal blocks
    add a learned embedding over frames to the attention input; cross-view blocks
    carry no per-view embedding and stay view-permutation equivariant.
    """

    def __init__(self, kind, dim, heads, mlp_ratio=4, max_len=32):
        super().__init__()
        if kind not in KINDS:
            raise ValueError(f"unknown block kind {kind!r}")
        self.kind = kind
        self.norm1 = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        self.attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_ratio * dim), nn.GELU(approximate="tanh"),
                                 nn.Linear(mlp_ratio * dim, dim))
        self.ada = nn.Sequential(nn.SiLU(), nn.Linear(dim, 6 * dim))
        nn.init.zeros_(self.ada[1].weight)
        nn.init.zeros_(self.ada[1].bias)
        self.pos = nn.Parameter(torch.randn(max_len, dim) * 0.02) if kind == "temporal" else None

    def _to_seq(self, x):
        return {"spatial": to_spatial, "temporal": to_temporal, "crossview": to_crossview}[self.kind](x)

    def _from_seq(self, s, shape):
        return {"spatial": from_spatial, "temporal": from_temporal, "crossview": from_crossview}[self.kind](s, shape)

    def forward(self, x, cond, key_mask=None):
        """x (B, T, V, N, D); cond (B, D); key_mask (B, V) for cross-view blocks."""
        B, T, V, N, D = x.shape
        s = self._to_seq(x)
        reps = s.shape[0] // B
        c = self.ada(cond).repeat_interleave(reps, 0)
        sh1, sc1, g1, sh2, sc2, g2 = c.chunk(6, dim=-1)
        h = modulate(self.norm1(s), sh1, sc1)
        if self.pos is not None:
            if s.shape[1] > self.pos.shape[0]:
                raise ValueError(f"sequence of {s.shape[1]} frames exceeds {self.pos.shape[0]}")
            h = h + self.pos[: s.shape[1]]
        km = None
        if self.kind == "crossview" and key_mask is not None:
            km = key_mask.repeat_interleave(reps, 0)
        s = s + g1[:, None] * self.attn(h, km)
        s = s + g2[:, None] * self.mlp(modulate(self.norm2(s), sh2, sc2))
        return self._from_seq(s, x.shape)
