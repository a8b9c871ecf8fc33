"""The dual-decoder VAE: shared encoder, image decoder and Gaussian decoder."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from ..splatcore import DecodeConfig
from .autoencoder import ImageAutoencoder, PosteriorStats, reparameterize
from .gsdecoder import GaussianDecoder, gs_decode, render_targets
from .losses import LAMBDA_STORM, W_DEPTH, W_KL, W_PERCEPTUAL, loss_storm, loss_vae, total_loss


@dataclass
class VAEConfig:
    latent_channels: int = 8
    downsample: int = 4
    widths: tuple = (32, 64)
    image_size: tuple = (64, 64)
    max_views: int = 6
    gs_patch: int = 2
    gs_dim: int = 256
    gs_depth: int = 6
    gs_heads: int = 8
    near: float = 0.5
    far: float = 60.0
    s_min: float = 1e-3
    s_max: float = 50.0
    scale_mode: str = "vector"
    lambda_storm: float = LAMBDA_STORM
    w_perceptual: float = W_PERCEPTUAL
    w_kl: float = W_KL
    w_depth: float = W_DEPTH
    n_targets: int = 3
    render_alpha_eps: float = 1e-3  # footprint truncation used while training

    @property
    def decode(self):
        return DecodeConfig(self.near, self.far, self.s_min, self.s_max, self.scale_mode)


@dataclass
class LatentGrid:
    values: torch.Tensor  # (T, V, C, h, w)
    downsample: int = 4
    view_mask: np.ndarray = None
    timestamps: np.ndarray = None
    cameras: list = field(default=None, repr=False)

    def __post_init__(self):
        if self.view_mask is None:
            self.view_mask = np.ones(self.values.shape[1], dtype=bool)

    @property
    def channels(self):
        return self.values.shape[2]


def select_context(clip_len=19, n_targets=3, rng=None):
    """Context frames {0, 6, 12, 18} for 19-frame clips (evenly spaced otherwise) plus
    ``n_targets`` distinct target frames drawn uniformly from the whole clip."""
    if clip_len < 4:
        raise ValueError(f"clip_len must be >= 4, got {clip_len}")
    if clip_len == 19:
        context = [0, 6, 12, 18]
    else:
        context = [int(round(x)) for x in np.linspace(0, clip_len - 1, 4)]
    rng = rng if rng is not None else np.random.default_rng()
    targets = sorted(int(x) for x in rng.choice(clip_len, size=min(n_targets, clip_len), replace=False))
    return context, targets


class DualDecoderVAE(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = cfg = config or VAEConfig()
        self.autoencoder = ImageAutoencoder(cfg.latent_channels, cfg.downsample, cfg.widths)
        latent_hw = (cfg.image_size[0] // cfg.downsample, cfg.image_size[1] // cfg.downsample)
        self.gs_decoder = GaussianDecoder(cfg.latent_channels, cfg.downsample, cfg.gs_patch, cfg.gs_dim,
                                          cfg.gs_depth, cfg.gs_heads, cfg.max_views, latent_hw, cfg.decode)

    @property
    def encoder(self):
        return self.autoencoder.encoder

    def encode(self, images):
        return self.autoencoder.encode(torch.as_tensor(images))

    def decode_image(self, z):
        return self.autoencoder.decode(z)

    def gs_decode(self, z_context, cameras, times, view_mask=None):
        return gs_decode(self.gs_decoder, z_context, cameras, times, view_mask)

    def render_targets(self, gs_out, cameras, times, alpha_eps=None):
        return render_targets(gs_out, cameras, times, self.config.decode, alpha_eps)

    def config_dict(self):
        return asdict(self.config)


def clip_losses(model, clip, rng, use_storm=True, seed=0):
    """All loss terms of one training clip.  Returns (total, parts)."""
    cfg = model.config
    context, targets = select_context(clip.n_frames, cfg.n_targets, rng)
    images = torch.as_tensor(clip.images)
    ctx_images = images[context]
    stats = model.encode(ctx_images)
    z = reparameterize(stats, seed=seed)
    recon = model.decode_image(z)
    l_vae, parts = loss_vae(ctx_images, recon, stats, cfg.w_perceptual, cfg.w_kl, parts=True)

    single_view = int(np.asarray(clip.view_mask).sum()) <= 1
    if not use_storm or single_view or cfg.lambda_storm == 0:
        parts["storm"] = torch.zeros(())
        return l_vae, parts

    cams = [clip.cameras[i] for i in context]
    times = [float(clip.timestamps[i]) for i in context]
    gs_out = model.gs_decode(z, cams, times, clip.view_mask)
    valid_views = [v for v in range(clip.n_views) if clip.view_mask[v]]
    tcams = [[clip.cameras[i][v] for v in valid_views] for i in targets]
    ttimes = [float(clip.timestamps[i]) for i in targets]
    rgb, outs = render_targets(gs_out, tcams, ttimes, cfg.decode, cfg.render_alpha_eps)
    depth = torch.stack([torch.stack([o.depth for o in row]) for row in outs])
    gt_rgb = images[targets][:, valid_views]
    gt_depth = torch.as_tensor(clip.depth[targets][:, valid_views])
    l_storm, sparts = loss_storm(rgb, gt_rgb, depth, gt_depth, w_d=cfg.w_depth, parts=True)
    parts.update(sparts)
    parts["storm"] = l_storm.detach()
    return total_loss(l_vae, l_storm, cfg.lambda_storm), parts


__all__ = ["DualDecoderVAE", "LatentGrid", "PosteriorStats", "VAEConfig", "clip_losses", "select_context"]
