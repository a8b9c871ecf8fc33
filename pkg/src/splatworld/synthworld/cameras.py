"""Pinhole cameras, quaternion helpers and the ego camera rig.

World frame convention: x right, y down, z forward (an identity-pose camera
looks down +z).  Quaternions are stored as (w, x, y, z).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ConfigurationError(ValueError):
    pass


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q)


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_rotmat(q):
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_yaw(theta):
    """Rotation by ``theta`` radians about the world y axis."""
    return np.array([math.cos(theta / 2), 0.0, math.sin(theta / 2), 0.0])


def rot_y(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass
class CameraModel:
    """Pinhole camera; ``quat``/``trans`` map world points into the camera frame."""

    fx: float
    fy: float
    cx: float
    cy: float
    quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))
    height: int = 64
    width: int = 64

    def __post_init__(self):
        self.quat = np.asarray(self.quat, dtype=np.float64)
        self.trans = np.asarray(self.trans, dtype=np.float64)
        if abs(np.linalg.norm(self.quat) - 1.0) >= 1e-6:
            raise ConfigurationError(f"camera quaternion is not unit norm: {self.quat}")
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigurationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigurationError("principal point outside the image")

    @property
    def rotation(self):
        return quat_to_rotmat(self.quat)

    @property
    def center(self):
        return -self.rotation.T @ self.trans

    @property
    def forward(self):
        return self.rotation.T @ np.array([0.0, 0.0, 1.0])

    def world_to_camera(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.trans

    def project(self, points_cam):
        z = points_cam[..., 2]
        u = self.fx * points_cam[..., 0] / z + self.cx
        v = self.fy * points_cam[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1)

    def pixel_grid(self):
        """(H, W, 2) pixel-centre coordinates (u, v); centres sit at integers."""
        v, u = np.meshgrid(np.arange(self.height, dtype=np.float64),
                           np.arange(self.width, dtype=np.float64), indexing="ij")
        return np.stack([u, v], axis=-1)

    def ray_directions(self):
        """Unit world-frame ray directions, shape (H, W, 3)."""
        uv = self.pixel_grid()
        d = np.stack([(uv[..., 0] - self.cx) / self.fx,
                      (uv[..., 1] - self.cy) / self.fy,
                      np.ones(uv.shape[:2])], axis=-1)
        d = d @ self.rotation  # camera -> world is R^T, applied to row vectors
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def with_pose(self, quat, trans):
        return CameraModel(self.fx, self.fy, self.cx, self.cy, quat_normalize(quat),
                           np.asarray(trans, dtype=np.float64), self.height, self.width)

    def to_dict(self):
        return {
            "fx": float(self.fx), "fy": float(self.fy),
            "cx": float(self.cx), "cy": float(self.cy),
            "quat": [float(x) for x in self.quat],
            "trans": [float(x) for x in self.trans],
            "height": int(self.height), "width": int(self.width),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], np.array(d["quat"]),
                   np.array(d["trans"]), int(d["height"]), int(d["width"]))

    def __eq__(self, other):
        if not isinstance(other, CameraModel):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def make_camera_rig(n_views, fov_deg, H, W):
    """Cameras at the ego origin, yaw-spaced evenly around the vertical axis."""
    if n_views < 1:
        raise ConfigurationError("n_views must be >= 1")
    if not 10 <= fov_deg <= 120:
        raise ConfigurationError(f"fov_deg must lie in [10, 120], got {fov_deg}")
    if H < 1 or W < 1:
        raise ConfigurationError("image size must be positive")
    f = (W / 2) / math.tan(math.radians(fov_deg) / 2)
    rig = []
    for v in range(n_views):
        yaw = math.radians(v * 360.0 / n_views)
        # camera -> world is a yaw of +yaw, so world -> camera is -yaw
        rig.append(CameraModel(f, f, W / 2, H / 2, quat_from_yaw(-yaw), np.zeros(3), H, W))
    return rig


def camera_at_ego_pose(rig_cam, ego_position, ego_yaw):
    """Fold the ego pose (position, yaw) into a rig camera's extrinsics."""
    q = quat_normalize(quat_multiply(rig_cam.quat, quat_from_yaw(-ego_yaw)))
    R = quat_to_rotmat(q)
    t = rig_cam.trans - R @ np.asarray(ego_position, dtype=np.float64)
    return rig_cam.with_pose(q, t)
