"""Brute-force per-pixel splatting reference, written independently in numpy.

Same image-formation definition as :func:`rasterize` (projection, alpha clamp,
near cull, frustum guard band, degenerate skip, front-to-back order by camera z) but every pixel
visits every Gaussian (a dense pixel x Gaussian matrix); nothing is tiled or
truncated.
"""
from __future__ import annotations

import numpy as np
import torch

from ..synthworld.cameras import quat_to_rotmat
from .rasterize import ALPHA_MAX, DILATION, EPS_ALPHA, GUARD, MAX_COND, NEAR_CULL, RenderOutput

MAX_GAUSSIANS = 10_000


def oracle_render(g, camera, dilation=DILATION):
    if len(g) > MAX_GAUSSIANS:
        raise ValueError(f"oracle_render is brute force; got {len(g)} > {MAX_GAUSSIANS} Gaussians")
    H, W = camera.height, camera.width
    pos = g.positions.detach().cpu().numpy().astype(np.float64)
    quats = g.quats.detach().cpu().numpy().astype(np.float64)
    scales = g.scales.detach().cpu().numpy().astype(np.float64)
    opac = g.opacities.detach().cpu().numpy().astype(np.float64)
    cols = g.colors.detach().cpu().numpy().astype(np.float64)

    Rc = camera.rotation
    entries = []
    for i in range(len(pos)):
        p = Rc @ pos[i] + camera.trans
        if p[2] <= NEAR_CULL:
            continue
        Rg = quat_to_rotmat(quats[i])
        S = Rg @ np.diag(scales[i] ** 2) @ Rg.T
        Sc = Rc @ S @ Rc.T
        x, y, z = p
        if abs(x / z) > GUARD * (W / 2) / camera.fx or abs(y / z) > GUARD * (H / 2) / camera.fy:
            continue
        J = np.array([[camera.fx / z, 0.0, -camera.fx * x / z ** 2],
                      [0.0, camera.fy / z, -camera.fy * y / z ** 2]])
        S2 = J @ Sc @ J.T + dilation * np.eye(2)
        ev = np.linalg.eigvalsh(S2)
        if ev[0] <= 0 or ev[1] > MAX_COND * ev[0]:
            continue
        mean = np.array([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy])
        entries.append((z, i, mean, np.linalg.inv(S2), float(np.linalg.norm(p))))
    entries.sort(key=lambda e: e[0])  # Python's sort is stable, as is the rasterizer's

    P = H * W
    if not entries:
        z = np.zeros
        t = lambda x: torch.as_tensor(x, dtype=torch.float64)
        return RenderOutput(t(z((H, W, 3))), t(z((H, W))), t(z((H, W))))
    order = np.array([e[1] for e in entries])
    means = np.stack([e[2] for e in entries])
    conics = np.stack([e[3] for e in entries])
    dists = np.array([e[4] for e in entries])
    v, u = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    pix = np.stack([u.ravel(), v.ravel()], axis=-1)
    d = pix[:, None, :] - means[None]  # (P, K, 2)
    maha = np.einsum("pki,kij,pkj->pk", d, conics, d)
    a = np.minimum(opac[order][None] * np.exp(-0.5 * maha), ALPHA_MAX)
    # transmittance before each Gaussian: product over all nearer ones
    trans = np.concatenate([np.ones((P, 1)), np.cumprod(1.0 - a, axis=1)[:, :-1]], axis=1)
    w = a * trans
    rgb = w @ cols[order]
    alpha = w.sum(axis=1)
    depth = (w @ dists) / np.maximum(alpha, EPS_ALPHA)
    t = lambda x: torch.as_tensor(x, dtype=torch.float64)
    return RenderOutput(t(rgb.reshape(H, W, 3)), t(depth.reshape(H, W)), t(alpha.reshape(H, W)))
