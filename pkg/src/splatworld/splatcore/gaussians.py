"""Gaussian primitives, pixel-aligned decoding and constant-velocity transport."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

N_RAW = 12
N_VEL = 3


class DecodeError(ValueError):
    pass


@dataclass
class GaussianSet:
    """A batch of N Gaussians stored as parallel tensors.

    ``means`` and ``anchor_times`` are the position and time the Gaussian was
    decoded at; ``times`` is its current (source) time.  The current centre is
    derived, so repeated transports compose exactly.
    """

    means: torch.Tensor  # (N, 3) anchor centre
    quats: torch.Tensor  # (N, 4) unit, (w, x, y, z)
    scales: torch.Tensor  # (N, 3)
    opacities: torch.Tensor  # (N,)
    colors: torch.Tensor  # (N, 3)
    velocities: torch.Tensor  # (N, 3)
    anchor_times: torch.Tensor  # (N,)
    times: torch.Tensor  # (N,)

    def __len__(self):
        return self.means.shape[0]

    @property
    def positions(self):
        dt = (self.times - self.anchor_times)[:, None]
        return self.means + self.velocities * dt

    @property
    def dtype(self):
        return self.means.dtype

    @classmethod
    def empty(cls, dtype=torch.float64):
        z = lambda *s: torch.zeros(*s, dtype=dtype)
        return cls(z(0, 3), z(0, 4), z(0, 3), z(0), z(0, 3), z(0, 3), z(0), z(0))

    @classmethod
    def create(cls, means, quats, scales, opacities, colors, velocities=None, times=0.0):
        means = torch.as_tensor(means)
        dtype = means.dtype if means.is_floating_point() else torch.float64
        t = lambda x: torch.as_tensor(x, dtype=dtype)
        n = means.shape[0]
        velocities = torch.zeros(n, 3, dtype=dtype) if velocities is None else t(velocities)
        times = t(times)
        if times.ndim == 0:
            times = times.expand(n).clone()
        q = t(quats)
        q = q / q.norm(dim=-1, keepdim=True)
        return cls(t(means), q, t(scales), t(opacities), t(colors), velocities, times.clone(), times.clone())

    def index(self, idx):
        return GaussianSet(*(getattr(self, f)[idx] for f in _FIELDS))

    @staticmethod
    def cat(sets):
        sets = list(sets)
        return GaussianSet(*(torch.cat([getattr(s, f) for s in sets]) for f in _FIELDS))

    def detach(self):
        return GaussianSet(*(getattr(self, f).detach() for f in _FIELDS))

    def validate(self, s_min=1e-3, s_max=50.0):
        if not all(torch.isfinite(getattr(self, f)).all() for f in _FIELDS):
            raise ValueError("non-finite Gaussian field")
        if len(self) and (self.quats.norm(dim=-1) - 1).abs().max() >= 1e-6:
            raise ValueError("quaternions must be unit norm")
        if len(self) and ((self.scales < s_min * (1 - 1e-9)) | (self.scales > s_max * (1 + 1e-9))).any():
            raise ValueError("scale outside [s_min, s_max]")
        if len(self) and ((self.opacities <= 0) | (self.opacities >= 1)).any():
            raise ValueError("opacity must lie in (0, 1)")


_FIELDS = ("means", "quats", "scales", "opacities", "colors", "velocities", "anchor_times", "times")


@dataclass
class PixelGaussianGrid:
    raw: torch.Tensor  # (H, W, 12) pre-activation
    velocity: torch.Tensor  # (H, W, 3) m/s
    camera: object  # CameraModel
    time: float


@dataclass
class DecodeConfig:
    near: float = 0.5
    far: float = 60.0
    s_min: float = 1e-3
    s_max: float = 50.0
    scale_mode: str = "vector"  # "vector": 3-axis scale; "scalar": isotropic + 2 padding channels


def camera_rays(camera, dtype=torch.float64, device=None):
    """Unit world-space rays (H, W, 3) and the camera centre (3,)."""
    dirs = torch.as_tensor(camera.ray_directions(), dtype=dtype, device=device)
    center = torch.as_tensor(camera.center, dtype=dtype, device=device)
    return dirs, center


def decode_raw(grid, config=None):
    """One Gaussian per pixel, placed along the pixel's ray at the decoded depth."""
    cfg = config or DecodeConfig()
    raw, vel = grid.raw, grid.velocity
    H, W = grid.camera.height, grid.camera.width
    if raw.shape != (H, W, N_RAW) or vel.shape != (H, W, N_VEL):
        raise DecodeError(f"grid shape {tuple(raw.shape)} does not match camera {H}x{W}")
    bad = ~torch.isfinite(raw).all(-1) | ~torch.isfinite(vel).all(-1)
    if bad.any():
        i, j = (int(x) for x in torch.nonzero(bad)[0])
        raise DecodeError(f"non-finite raw values at pixel (row={i}, col={j})")

    dirs, center = camera_rays(grid.camera, raw.dtype, raw.device)
    raw = raw.reshape(-1, N_RAW)
    depth = cfg.near + (cfg.far - cfg.near) * torch.sigmoid(raw[:, 0])
    means = center + depth[:, None] * dirs.reshape(-1, 3)
    q = raw[:, 1:5]
    quats = q / q.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    if cfg.scale_mode == "vector":
        scales = torch.exp(raw[:, 5:8]).clamp(cfg.s_min, cfg.s_max)
        o = 8
    elif cfg.scale_mode == "scalar":
        scales = torch.exp(raw[:, 5:6]).clamp(cfg.s_min, cfg.s_max).expand(-1, 3)
        o = 6
    else:
        raise ValueError(f"unknown scale_mode {cfg.scale_mode!r}")
    opacities = torch.sigmoid(raw[:, o])
    colors = torch.sigmoid(raw[:, o + 1:o + 4])
    times = torch.full((H * W,), float(grid.time), dtype=raw.dtype, device=raw.device)
    return GaussianSet(means, quats, scales, opacities, colors, vel.reshape(-1, 3), times, times.clone())


def transport(g, t_prime):
    """Move every Gaussian to time ``t_prime`` along its velocity."""
    times = torch.full_like(g.times, float(t_prime))
    return replace(g, times=times)


def quat_to_rotmat(q):
    w, x, y, z = q.unbind(-1)
    return torch.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], dim=-1).reshape(*q.shape[:-1], 3, 3)


def to_numpy_dict(g):
    return {f: getattr(g, f).detach().cpu().numpy() for f in _FIELDS}


def save_gaussians_text(g, path):
    """One Gaussian per line: x y z qw qx qy qz sx sy sz opacity r g b vx vy vz t."""
    d = to_numpy_dict(g)
    pos = g.positions.detach().cpu().numpy()
    table = np.concatenate([pos, d["quats"], d["scales"], d["opacities"][:, None], d["colors"],
                            d["velocities"], d["times"][:, None]], axis=1)
    header = "x y z qw qx qy qz sx sy sz opacity r g b vx vy vz t"
    np.savetxt(path, table, fmt="%.7g", header=header)
