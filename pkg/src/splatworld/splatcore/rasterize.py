"""Differentiable EWA splatting of a GaussianSet into one camera.

Gradients come from torch autograd; only the pixel/Gaussian pairing and the
depth sort are computed without gradient.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

import torch

from .gaussians import quat_to_rotmat

ALPHA_MAX = 0.999
NEAR_CULL = 0.1
EPS_ALPHA = 1e-6
MAX_COND = 1e8
GUARD = 1.3  # frustum guard band, as a multiple of the half field of view
DILATION = 0.3  # px^2 added to every screen covariance
ALPHA_EPS = 1e-15  # footprint truncation; depth error scales as n * ALPHA_EPS / EPS_ALPHA


class _Diagnostics:
    def __init__(self):
        self._lock = threading.Lock()
        self.skipped_degenerate = 0

    def add(self, n):
        if n:
            with self._lock:
                self.skipped_degenerate += int(n)

    def reset(self):
        with self._lock:
            self.skipped_degenerate = 0


DIAGNOSTICS = _Diagnostics()


@dataclass
class RenderOutput:
    rgb: torch.Tensor  # (H, W, 3)
    depth: torch.Tensor  # (H, W)
    alpha: torch.Tensor  # (H, W)
    n_skipped: int = 0


def empty_output(camera, dtype=torch.float64, device=None):
    H, W = camera.height, camera.width
    return RenderOutput(torch.zeros(H, W, 3, dtype=dtype, device=device),
                        torch.zeros(H, W, dtype=dtype, device=device),
                        torch.zeros(H, W, dtype=dtype, device=device))


def project(g, camera, dilation=DILATION):
    """Camera-frame centres, screen means and screen covariances for every Gaussian."""
    dtype, dev = g.dtype, g.means.device
    R = torch.as_tensor(camera.rotation, dtype=dtype, device=dev)
    t = torch.as_tensor(camera.trans, dtype=dtype, device=dev)
    pc = g.positions @ R.T + t
    x, y, z = pc.unbind(-1)
    zs = torch.where(z > NEAR_CULL, z, torch.ones_like(z))  # keeps culled rows finite

    Rg = quat_to_rotmat(g.quats)
    M = Rg * g.scales[:, None, :]
    cov_c = R @ (M @ M.transpose(1, 2)) @ R.T

    fx, fy = camera.fx, camera.fy
    zero = torch.zeros_like(zs)
    J = torch.stack([
        torch.stack([fx / zs, zero, -fx * x / zs ** 2], -1),
        torch.stack([zero, fy / zs, -fy * y / zs ** 2], -1),
    ], dim=1)
    cov2 = J @ cov_c @ J.transpose(1, 2)
    cov2 = cov2 + dilation * torch.eye(2, dtype=dtype, device=dev)
    mean2 = torch.stack([fx * x / zs + camera.cx, fy * y / zs + camera.cy], -1)
    return pc, mean2, cov2


def _screen_eigs(a, b, c):
    mid = 0.5 * (a + c)
    rad = torch.sqrt((0.5 * (a - c)) ** 2 + b * b)
    return mid + rad, mid - rad


def rasterize(g, camera, alpha_eps=ALPHA_EPS, dilation=DILATION):
    """Render rgb, alpha-normalised ray depth and accumulated alpha."""
    H, W = camera.height, camera.width
    dtype, dev = g.dtype, g.means.device
    if len(g) == 0:
        return empty_output(camera, dtype, dev)

    # cheap no-grad visibility pass so the differentiable path only sees candidates
    with torch.no_grad():
        R = torch.as_tensor(camera.rotation, dtype=dtype, device=dev)
        t = torch.as_tensor(camera.trans, dtype=dtype, device=dev)
        pcd = g.positions.detach() @ R.T + t
        zc = pcd[:, 2]
        zs = zc.clamp_min(NEAR_CULL)
        # guard band: EWA's linearisation is meaningless far outside the frustum
        in_x = (pcd[:, 0] / zs).abs() <= GUARD * (W / 2) / camera.fx
        in_y = (pcd[:, 1] / zs).abs() <= GUARD * (H / 2) / camera.fy
        cand = torch.nonzero((zc > NEAR_CULL) & in_x & in_y & (g.opacities.detach() > alpha_eps)).squeeze(1)
    if cand.numel() == 0:
        return empty_output(camera, dtype, dev)
    if cand.numel() < len(g):
        g = g.index(cand)

    pc, mean2, cov2 = project(g, camera, dilation)
    a, b, c = cov2[:, 0, 0], cov2[:, 0, 1], cov2[:, 1, 1]
    with torch.no_grad():
        lmax, lmin = _screen_eigs(a.double(), b.double(), c.double())
        degenerate = (lmin <= 0) | (lmax > MAX_COND * lmin) | ~torch.isfinite(lmax)
        n_skipped = int(degenerate.sum())
        DIAGNOSTICS.add(n_skipped)
        o = g.opacities.detach()
        # alpha >= eps requires d^T S^-1 d <= q; the ellipse's axis extents are sqrt(q * S_ii)
        q = 2.0 * torch.log(o.clamp_min(alpha_eps) / alpha_eps)
        rx = torch.sqrt(q * a.detach().clamp_min(0))
        ry = torch.sqrt(q * c.detach().clamp_min(0))
        m2 = mean2.detach()
        x0 = torch.ceil(m2[:, 0] - rx).clamp(0, W - 1)
        x1 = torch.floor(m2[:, 0] + rx).clamp(-1, W - 1)
        y0 = torch.ceil(m2[:, 1] - ry).clamp(0, H - 1)
        y1 = torch.floor(m2[:, 1] + ry).clamp(-1, H - 1)
        on_screen = (m2[:, 0] + rx >= 0) & (m2[:, 0] - rx <= W - 1) & (m2[:, 1] + ry >= 0) & (m2[:, 1] - ry <= H - 1)
        keep = ~degenerate & on_screen & torch.isfinite(x0) & torch.isfinite(y0)
        idx = torch.nonzero(keep).squeeze(1)
        if idx.numel() == 0:
            out = empty_output(camera, dtype, dev)
            out.n_skipped = n_skipped
            return out
        # front-to-back rank by camera-frame z (stable for ties)
        idx = idx[torch.sort(pc[idx, 2].detach(), stable=True).indices]
        nx = (x1[idx] - x0[idx] + 1).clamp_min(0).long()
        ny = (y1[idx] - y0[idx] + 1).clamp_min(0).long()
        counts = nx * ny
        rank = torch.repeat_interleave(torch.arange(idx.numel(), device=dev), counts)
        gid = idx[rank]
        offs = torch.arange(int(counts.sum()), device=dev) - torch.repeat_interleave(torch.cumsum(counts, 0) - counts, counts)
        nx_r = nx[rank]
        px = x0[gid].long() + offs % nx_r
        py = y0[gid].long() + torch.div(offs, nx_r, rounding_mode="floor")
        # the bounding box over-covers the alpha >= eps ellipse; drop the corners
        ad, bd, cd = a.detach()[idx].double(), b.detach()[idx].double(), c.detach()[idx].double()
        dd = ad * cd - bd * bd
        ddx = px.double() - m2[gid, 0].double()
        ddy = py.double() - m2[gid, 1].double()
        maha = (cd[rank] * ddx * ddx - 2 * bd[rank] * ddx * ddy + ad[rank] * ddy * ddy) / dd[rank]
        inside = maha <= q[gid].double()
        gid, rank, px, py = gid[inside], rank[inside], px[inside], py[inside]
        if gid.numel() == 0:
            out = empty_output(camera, dtype, dev)
            out.n_skipped = n_skipped
            return out
        pix = py * W + px
        # one sort on (pixel, depth rank) groups pairs per pixel in front-to-back order
        order = torch.sort(pix * idx.numel() + rank).indices
        rank, pix, px, py = rank[order], pix[order], px[order], py[order]
        _, seg_counts = torch.unique_consecutive(pix, return_counts=True)
        seg_start = torch.repeat_interleave(torch.cumsum(seg_counts, 0) - seg_counts, seg_counts)

    # conic, alpha and transmittance in float64: ac - b^2 cancels badly in float32 for
    # elongated footprints.  Conics only for kept Gaussians, since a singular one would
    # turn its zero gradient into 0 * inf.  Per-Gaussian terms are gathered to pairs once.
    f64 = torch.float64
    ak, bk, ck = a[idx].to(f64), b[idx].to(f64), c[idx].to(f64)
    det = ak * ck - bk * bk
    per = torch.cat([mean2[idx].to(f64), torch.stack([ck / det, -bk / det, ak / det], -1),
                     g.opacities[idx].to(f64)[:, None], g.colors[idx].to(f64),
                     pc[idx].to(f64).norm(dim=-1, keepdim=True)], -1)[rank]
    mx, my, ia, ib, ic, op, cr, cg, cb, dist = per.unbind(-1)
    dx = px.to(f64) - mx
    dy = py.to(f64) - my
    power = (-0.5 * (ia * dx * dx + 2 * ib * dx * dy + ic * dy * dy)).clamp(max=0.0)
    alpha = torch.clamp(op * torch.exp(power), max=ALPHA_MAX)

    # exclusive per-pixel transmittance via a segmented log-space cumsum
    log1m = torch.log1p(-alpha)
    cs = torch.cumsum(log1m, 0)
    excl = cs - log1m - (cs[seg_start] - log1m[seg_start])
    w = alpha * torch.exp(excl)

    P = H * W
    vals = torch.stack([w * cr, w * cg, w * cb, w, w * dist], -1)
    acc5 = torch.zeros(P, 5, dtype=f64, device=dev).index_add(0, pix, vals).to(dtype)
    rgb, acc, dnum = acc5[:, :3], acc5[:, 3], acc5[:, 4]
    depth = dnum / acc.clamp_min(EPS_ALPHA)
    return RenderOutput(rgb.reshape(H, W, 3), depth.reshape(H, W), acc.reshape(H, W), n_skipped)


def composite_sky(out, sky_color):
    sky = torch.as_tensor(sky_color, dtype=out.rgb.dtype, device=out.rgb.device)
    return torch.clamp(out.rgb + (1 - out.alpha)[..., None] * sky, 0.0, 1.0)


def apply_exposure(rgb, gain, bias):
    return torch.clamp(gain * rgb + bias, 0.0, 1.0)

