"""Conditional video generation, autoregressive extension and sliding-window 4D reconstruction."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch

from ..cvdiffusion import autoregress, sample
from ..gsvae.gsdecoder import gaussians_from_output
from ..splatcore import save_gaussians_text
from .train import bundle, prepare_latents

REF_CHOICES = (0, 1, 3)
AR_REFS = 3  # references carried between autoregressive windows


def horizon_windows(horizon, window, n_ref=0):
    """Number of sampler windows needed for ``horizon`` total frames, or ValueError."""
    stride = window - AR_REFS
    if n_ref not in REF_CHOICES:
        raise ValueError(f"n_ref must be one of {REF_CHOICES}")
    if horizon < window or (horizon - window) % stride:
        raise ValueError(f"horizon {horizon} not reachable with windows of {window} advancing {stride}")
    return 1 + (horizon - window) // stride


@dataclass
class Generation:
    latents: torch.Tensor  # (B, horizon, V, C, h, w), scaled
    videos: np.ndarray  # (B, horizon, V, H, W, 3)
    n_windows: int


@torch.no_grad()
def generate(vae, dit, latent_scale, clips, n_ref=0, horizon=None, steps=50, seed=0, guidance_scale=1.0,
             sampler=None):
    """Generate one video per conditioning clip.

    Conditions (text, boxes, lanes) come from the clips; with n_ref > 0 the
    clips' first frames are encoded and used as references.  ``horizon``
    counts total output frames and defaults to the clip length.
    """
    sampler = sampler or sample
    items, _ = prepare_latents(vae, clips, latent_scale)
    T = items[0].latents.shape[0]
    window = min(T, dit.config.max_frames)
    horizon = horizon or T
    n_windows = horizon_windows(horizon, window, n_ref)
    if horizon > T:
        raise ValueError(f"horizon {horizon} exceeds the {T} frames of available conditions")
    z_all, cond_all = bundle(items)
    shape = (len(items), window, *z_all.shape[2:])
    refs = z_all[:, :n_ref] if n_ref else None
    first = sampler(dit, cond_all.frames(slice(0, window)), shape, refs, steps, seed, guidance_scale)
    z = first
    if n_windows > 1:
        z = autoregress(dit, cond_all.frames(slice(window - AR_REFS, horizon)), horizon - window, first[:, -AR_REFS:],
                        window, steps, seed + 1, guidance_scale)
        z = torch.cat([first, z[:, AR_REFS:]], 1)
    videos = vae.decode_image(z / latent_scale).clamp(0, 1).numpy()
    return Generation(z, videos, n_windows)


def window_starts(n_frames, size=4, stride=3):
    """Window starts 0, 3, 6, ...; the last start is clamped so the final window ends on the last frame."""
    if n_frames < size:
        raise ValueError(f"need at least {size} frames, got {n_frames}")
    starts = list(range(0, n_frames - size + 1, stride))
    if starts[-1] != n_frames - size:
        starts.append(n_frames - size)
    return starts


@dataclass
class Reconstruction:
    rgb: np.ndarray  # (L, V, H, W, 3)
    depth: np.ndarray  # (L, V, H, W)
    alpha: np.ndarray
    starts: list
    source_window: np.ndarray  # (L,) index of the window that produced each frame


@torch.no_grad()
def reconstruct4d(vae, latents, cameras, times, view_mask=None, out_dir=None, alpha_eps=None):
    """Sliding 4-frame reconstruction; each window renders its own context frames.

    latents (L, V, C, h, w) unscaled posterior values.  Frames shared by two
    windows keep the later window's render.
    """
    L, V = latents.shape[:2]
    starts = window_starts(L)
    vm = np.ones(V, bool) if view_mask is None else np.asarray(view_mask, bool)
    first = next(c for c in cameras[0] if c is not None)
    H, W = first.height, first.width
    rgb = np.zeros((L, V, H, W, 3), np.float32)
    depth = np.full((L, V, H, W), np.nan, np.float32)
    alpha = np.zeros((L, V, H, W), np.float32)
    src = np.full(L, -1)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    for wi, s in enumerate(starts):
        idx = list(range(s, s + 4))
        cams = [cameras[i] for i in idx]
        ts = [float(times[i]) for i in idx]
        out = vae.gs_decode(latents[idx], cams, ts, vm)
        g = gaussians_from_output(out, vae.config.decode)
        valid = [v for v in range(V) if vm[v]]
        r, outs = vae.render_targets(out, [[cams[j][v] for v in valid] for j in range(4)], ts, alpha_eps)
        for j, i in enumerate(idx):
            for k, v in enumerate(valid):
                rgb[i, v] = r[j, k].numpy()
                depth[i, v] = outs[j][k].depth.numpy()
                alpha[i, v] = outs[j][k].alpha.numpy()
            src[i] = wi
        if out_dir:
            save_gaussians_text(g, os.path.join(out_dir, f"gaussians_window_{wi:03d}.txt"))
    return Reconstruction(rgb, depth, alpha, starts, src)
