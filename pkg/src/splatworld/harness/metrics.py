"""Image/depth accuracy metrics and a Fréchet distance over frozen-encoder features."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

log = logging.getLogger(__name__)
DELTA1_THRESHOLD = 1.25
RIDGE = 1e-6


def _np(x):
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().double().numpy()
    return np.asarray(x, dtype=np.float64)


def psnr(x, x_hat):
    """10 log10(1 / MSE) for images in [0, 1]."""
    mse = np.mean((_np(x) - _np(x_hat)) ** 2)
    return float("inf") if mse == 0 else float(10.0 * np.log10(1.0 / mse))


def _valid(d, d_hat, mask):
    d, d_hat = _np(d), _np(d_hat)
    valid = np.isfinite(d) & (d > 0)
    if mask is not None:
        valid &= _np(mask).astype(bool)
    if not valid.any():
        raise ValueError("depth mask selects no pixels")
    return d[valid], d_hat[valid]


def drmse(d, d_hat, mask=None):
    d, d_hat = _valid(d, d_hat, mask)
    return float(np.sqrt(np.mean((d - d_hat) ** 2)))


def absrel(d, d_hat, mask=None):
    d, d_hat = _valid(d, d_hat, mask)
    return float(np.mean(np.abs(d - d_hat) / d))


def delta1(d, d_hat, mask=None):
    d, d_hat = _valid(d, d_hat, mask)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(d / d_hat, d_hat / d)
    return float(np.mean(np.nan_to_num(ratio, nan=np.inf) < DELTA1_THRESHOLD))


def _sqrtm_psd(m):
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(f1, f2):
    """Squared Fréchet distance between Gaussian fits of two feature sets (n, d).

    tr((S1 S2)^1/2) is taken as tr((S1^1/2 S2 S1^1/2)^1/2), which only needs
    symmetric square roots.
    """
    f1, f2 = _np(f1), _np(f2)
    if f1.shape[0] < 2 or f2.shape[0] < 2:
        raise ValueError("need at least two samples per side")
    mu1, mu2 = f1.mean(0), f2.mean(0)
    s1 = np.atleast_2d(np.cov(f1, rowvar=False))
    s2 = np.atleast_2d(np.cov(f2, rowvar=False))
    for s in (s1, s2):
        if np.linalg.matrix_rank(s) < s.shape[0]:
            log.info("singular feature covariance, adding ridge %g", RIDGE)
            s += RIDGE * np.eye(s.shape[0])
    r1 = _sqrtm_psd(s1)
    cross = _sqrtm_psd(r1 @ s2 @ r1)
    d2 = np.sum((mu1 - mu2) ** 2) + np.trace(s1) + np.trace(s2) - 2 * np.trace(cross)
    return float(max(d2, 0.0))


@torch.no_grad()
def latent_features(encoder, clips_images, mode="image", view_masks=None):
    """Pooled posterior means of the frozen encoder.

    clips_images: list of (T, V, H, W, 3) arrays.  Image mode yields one
    feature per (clip, frame, valid view); video mode concatenates a clip
    view's per-frame features over time.
    """
    feats = []
    for i, imgs in enumerate(clips_images):
        x = torch.as_tensor(np.asarray(imgs), dtype=torch.float32)
        pooled = encoder.encode(x).mean.mean(dim=(-2, -1))  # (T, V, C)
        vm = np.ones(x.shape[1], bool) if view_masks is None else np.asarray(view_masks[i], bool)
        pooled = pooled[:, torch.as_tensor(vm)]
        if mode == "image":
            feats.append(pooled.reshape(-1, pooled.shape[-1]))
        elif mode == "video":
            feats.append(pooled.permute(1, 0, 2).reshape(pooled.shape[1], -1))
        else:
            raise ValueError(f"unknown mode {mode!r}")
    return torch.cat(feats).double().numpy()


def frechet_latent(real_clips, generated_clips, encoder, mode="image"):
    return frechet_distance(latent_features(encoder, real_clips, mode), latent_features(encoder, generated_clips, mode))


@dataclass
class MetricsReport:
    metrics: dict
    per_clip: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        bad = [k for k, v in self.metrics.items() if not np.isfinite(v)]
        if bad:
            raise ValueError(f"non-finite metrics: {bad}")

    def to_dict(self):
        return {"metrics": self.metrics, "per_clip": self.per_clip, "meta": self.meta}
