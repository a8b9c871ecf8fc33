"""Rectified-flow objective, Euler sampler with reference inpainting, autoregression."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .model import BlockMask

T_MIN = 1e-6  # model time is kept strictly inside (0, 1)


@dataclass
class FlowSample:
    z0: torch.Tensor
    eps: torch.Tensor
    t: torch.Tensor  # (B,)
    z_t: torch.Tensor
    target: torch.Tensor  # z0 - eps


def _generator(seed, device=None):
    g = torch.Generator(device=device or "cpu")
    g.manual_seed(int(seed))
    return g


def sample_times(n, generator, dist="uniform", dtype=torch.float32):
    if dist == "uniform":
        u = torch.rand(n, generator=generator, dtype=torch.float64)
    elif dist == "logit_normal":
        u = torch.sigmoid(torch.randn(n, generator=generator, dtype=torch.float64))
    else:
        raise ValueError(f"unknown time distribution {dist!r}")
    return u.clamp(T_MIN, 1 - T_MIN).to(dtype)


def make_flow_sample(z0, seed=0, t=None, dist="uniform", generator=None):
    """z_t = (1 - t) z0 + t eps with seeded unit-normal eps; z0 is (B, ...)."""
    g = generator or _generator(seed)
    B = z0.shape[0]
    if t is None:
        t = sample_times(B, g, dist, z0.dtype)
    t = torch.as_tensor(t, dtype=z0.dtype).reshape(-1).expand(B)
    eps = torch.randn(z0.shape, generator=g, dtype=z0.dtype)
    tb = t.reshape(B, *([1] * (z0.ndim - 1)))
    return FlowSample(z0, eps, t, (1 - tb) * z0 + tb * eps, z0 - eps)


def flow_loss(pred, sample, ref_mask=None, view_mask=None):
    """Mean squared error to z0 - eps over non-reference frames of valid views.

    pred and target are (B, T, V, C, h, w); ref_mask (B, T); view_mask (B, V).
    """
    if pred.shape != sample.target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(sample.target.shape)}")
    err = (pred - sample.target) ** 2
    if ref_mask is None and view_mask is None:
        return err.mean()
    B, T, V = pred.shape[:3]
    w = torch.ones(B, T, V, dtype=pred.dtype, device=pred.device)
    if ref_mask is not None:
        w = w * (~ref_mask.bool()).to(pred.dtype)[:, :, None]
    if view_mask is not None:
        w = w * view_mask.to(pred.dtype)[:, None, :]
    per = err.flatten(3).mean(-1)
    # the where keeps reference content out of the graph entirely
    per = torch.where(w > 0, per, torch.zeros((), dtype=pred.dtype, device=pred.device))
    return (per * w).sum() / w.sum().clamp_min(1.0)


def block_dropout(p_temporal=0.1, p_crossview=0.1, seed=0, allow_both=False, generator=None):
    """Which block families run this step.

    By default at most one family is dropped: a single uniform draw picks
    temporal with probability p_temporal and cross-view with p_crossview.
    """
    for p in (p_temporal, p_crossview):
        if not 0 <= p <= 1:
            raise ValueError(f"drop probability {p} outside [0, 1]")
    rng = generator if generator is not None else np.random.default_rng(seed)
    if allow_both:
        return BlockMask(True, bool(rng.random() >= p_temporal), bool(rng.random() >= p_crossview))
    if p_temporal + p_crossview > 1:
        raise ValueError("exclusive dropout needs p_temporal + p_crossview <= 1")
    u = rng.random()
    return BlockMask(True, not u < p_temporal, not (p_temporal <= u < p_temporal + p_crossview))


def initial_noise(shape, seed, dtype=torch.float32):
    return torch.randn(shape, generator=_generator(seed), dtype=dtype)


def oracle_predictor(z0, eps):
    """Exact model for a single known pair: always predicts z0 - eps."""
    target = z0 - eps

    def predict(z_t, t, cond, blocks=None):
        return target

    return predict


def _guided(model, z, t, cond, guidance_scale):
    pred = model(z, t, cond)
    if guidance_scale == 1.0:
        return pred
    uncond = model(z, t, cond.null())
    return uncond + guidance_scale * (pred - uncond)


@torch.no_grad()
def sample(model, cond, shape, ref_latents=None, steps=50, seed=0, guidance_scale=1.0, noise=None):
    """Integrate from noise at t=1 to t=0 with uniform Euler steps.

    ``shape`` is (B, T, V, C, h, w).  The first k frames are held on their
    exact interpolant (1 - t) ref + t eps_ref after every step.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    eps = initial_noise(shape, seed) if noise is None else noise
    z = eps.clone()
    k = 0 if ref_latents is None else ref_latents.shape[1]
    if k:
        ref = ref_latents.to(z.dtype)
        cond = cond.with_refs(k)
    B = shape[0]
    dt = 1.0 / steps
    for i in range(steps, 0, -1):
        t = i / steps
        t_next = (i - 1) / steps
        tm = torch.full((B,), min(max(t, T_MIN), 1 - T_MIN), dtype=z.dtype)
        z = z + dt * _guided(model, z, tm, cond, guidance_scale)
        if k:
            z[:, :k] = ref if t_next == 0 else (1 - t_next) * ref + t_next * eps[:, :k]
    return z


@torch.no_grad()
def autoregress(model, cond, horizon, ref_latents, window=19, steps=50, seed=0, guidance_scale=1.0,
                latent_shape=None):
    """Extend ``ref_latents`` (B, k, V, C, h, w) by ``horizon`` novel frames.

    ``cond`` spans all k + horizon frames.  Each window samples ``window``
    frames whose first k are the last k frames produced so far; window i uses
    seed + i.
    """
    k = ref_latents.shape[1]
    stride = window - k
    if k < 1 or stride < 1:
        raise ValueError("need 1 <= k < window")
    if horizon < stride or horizon % stride:
        raise ValueError(f"horizon {horizon} is not a positive multiple of {stride}")
    if cond.ref_mask.shape[1] < k + horizon:
        raise ValueError("conditions do not cover the requested horizon")
    out = ref_latents
    for i in range(horizon // stride):
        start = i * stride
        shape = (ref_latents.shape[0], window, *ref_latents.shape[2:])
        z = sample(model, cond.frames(slice(start, start + window)), shape, out[:, -k:], steps, seed + i,
                   guidance_scale)
        out = torch.cat([out, z[:, k:]], 1)
    return out
