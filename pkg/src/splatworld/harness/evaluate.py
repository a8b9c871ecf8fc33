"""Evaluation of reconstruction quality and generated-video distributions."""
from __future__ import annotations

import numpy as np
import torch

from ..gsvae import select_context
from . import metrics as M


@torch.no_grad()
def render_context(vae, clip, alpha_eps=None):
    """Encode the context frames, decode Gaussians and render them back at the context poses."""
    context, _ = select_context(clip.n_frames, 0)
    z = vae.encode(torch.as_tensor(clip.images[context])).mean
    cams = [clip.cameras[i] for i in context]
    times = [float(clip.timestamps[i]) for i in context]
    out = vae.gs_decode(z, cams, times, clip.view_mask)
    valid = [v for v in range(clip.n_views) if clip.view_mask[v]]
    eps = vae.config.render_alpha_eps if alpha_eps is None else alpha_eps
    rgb, outs = vae.render_targets(out, [[c[v] for v in valid] for c in cams], times, eps)
    depth = torch.stack([torch.stack([o.depth for o in row]) for row in outs]).numpy()
    return context, valid, rgb.numpy(), depth


def evaluate_vae(vae, clips, meta=None, alpha_eps=None):
    """PSNR / D-RMSE / AbsRel / delta1 of rendered context frames, pooled over pixels of all clips."""
    per_clip = {}
    all_gt, all_pred, sq = [], [], []
    for clip in clips:
        context, valid, rgb, depth = render_context(vae, clip, alpha_eps)
        gt_rgb = clip.images[context][:, valid]
        gt = clip.depth[context][:, valid]
        mask = np.isfinite(gt) & (gt > 0)
        per_clip[clip.clip_id] = {"psnr": M.psnr(gt_rgb, rgb), "drmse": M.drmse(gt, depth, mask),
                                  "absrel": M.absrel(gt, depth, mask), "delta1": M.delta1(gt, depth, mask)}
        all_gt.append(gt[mask])
        all_pred.append(depth[mask])
        sq.append(np.mean((gt_rgb.astype(np.float64) - rgb) ** 2))
    gt, pred = np.concatenate(all_gt), np.concatenate(all_pred)
    metrics = {"psnr": float(np.mean([v["psnr"] for v in per_clip.values()])),
               "drmse": M.drmse(gt, pred), "absrel": M.absrel(gt, pred), "delta1": M.delta1(gt, pred)}
    return M.MetricsReport(metrics, per_clip, meta or {})


def frechet_report(real_videos, generated_videos, evaluator, meta=None):
    """Image- and video-mode Fréchet proxies of generated (N, T, V, H, W, 3) videos against real ones."""
    return M.MetricsReport({"frechet_image": M.frechet_latent(real_videos, generated_videos, evaluator, "image"),
                            "frechet_video": M.frechet_latent(real_videos, generated_videos, evaluator, "video")},
                           meta=meta or {})
