"""Training objectives of the dual-decoder VAE."""
from __future__ import annotations

import torch
import torch.nn.functional as F

W_PERCEPTUAL = 0.1
W_KL = 1e-6
W_DEPTH = 0.05
LAMBDA_STORM = 0.5


def kl_divergence(stats):
    return 0.5 * torch.mean(stats.mean ** 2 + torch.exp(stats.logvar) - 1.0 - stats.logvar)


def gradient_perceptual(x, x_hat, scales=3):
    """Multi-scale L1 distance between horizontal/vertical image gradients.

    Images are channels-last (..., H, W, 3).  Stands in for a learned
    perceptual metric; swap via the ``perceptual`` argument of :func:`loss_vae`.
    """
    a = x.reshape(-1, *x.shape[-3:]).permute(0, 3, 1, 2)
    b = x_hat.reshape(-1, *x_hat.shape[-3:]).permute(0, 3, 1, 2)
    total = x.new_zeros(())
    for s in range(scales):
        if s:
            a, b = F.avg_pool2d(a, 2), F.avg_pool2d(b, 2)
        total = total + (a.diff(dim=-1) - b.diff(dim=-1)).abs().mean()
        total = total + (a.diff(dim=-2) - b.diff(dim=-2)).abs().mean()
    return total / scales


def loss_vae(x, x_hat, stats, w_p=W_PERCEPTUAL, w_kl=W_KL, perceptual=gradient_perceptual, parts=False):
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    mse = F.mse_loss(x_hat, x)
    perc = perceptual(x, x_hat)
    kl = kl_divergence(stats)
    total = mse + w_p * perc + w_kl * kl
    if parts:
        return total, {"mse": mse.detach(), "perceptual": perc.detach(), "kl": kl.detach()}
    return total


def loss_storm(renders, gt_images, render_depth, gt_depth, valid_depth_mask=None, w_d=W_DEPTH, parts=False):
    """Render MSE plus ``w_d`` times L1 depth error over valid finite-depth pixels."""
    gt_images = torch.as_tensor(gt_images, dtype=renders.dtype, device=renders.device)
    gt_depth = torch.as_tensor(gt_depth, dtype=render_depth.dtype, device=render_depth.device)
    rgb = F.mse_loss(renders, gt_images)
    valid = torch.isfinite(gt_depth) & (gt_depth > 0)
    if valid_depth_mask is not None:
        valid &= torch.as_tensor(valid_depth_mask, dtype=torch.bool, device=valid.device)
    if valid.any():
        depth = (render_depth[valid] - gt_depth[valid]).abs().mean()
    else:
        depth = render_depth.new_zeros(())
    total = rgb + w_d * depth
    if parts:
        return total, {"rgb": rgb.detach(), "depth_l1": depth.detach()}
    return total


def total_loss(l_vae, l_storm, lam=LAMBDA_STORM):
    return l_vae + lam * l_storm
