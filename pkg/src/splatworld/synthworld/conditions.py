"""Box and lane annotations and their per-view rasterization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import N_CLASSES

NEAR = 0.1
LANE_STROKE = 1.5  # pixels

# corner index bits: (x, y, z) sign pattern
_CORNER_SIGNS = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
_EDGES = [(i, j) for i in range(8) for j in range(i + 1, 8) if bin(i ^ j).count("1") == 1]


@dataclass
class SceneConditions:
    text_tokens: list
    boxes: list  # per timestep: (n, 8) array of cx, cy, cz, sx, sy, sz, yaw, class
    lanes: list  # (K, 3) polylines on the ground
    box_raster: np.ndarray  # (T, V, H, W, 1)
    lane_raster: np.ndarray  # (T, V, H, W, 1)


def scene_boxes(scene, t):
    rows = []
    for p in scene.primitives:
        c = p.center_at(t)
        rows.append([c[0], c[1], c[2], *(2 * p.half_extent), p.yaw, p.class_id])
    return np.array(rows, dtype=np.float64).reshape(-1, 8)


def box_corners(box):
    cx, cy, cz, sx, sy, sz, yaw, _ = box
    local = _CORNER_SIGNS * np.array([sx, sy, sz]) / 2
    c, s = np.cos(yaw), np.sin(yaw)
    R = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return local @ R.T + np.array([cx, cy, cz])


def _convex_hull(points):
    """Andrew's monotone chain; returns counter-clockwise vertices."""
    pts = sorted(set(map(tuple, np.round(points, 12))))
    if len(pts) <= 2:
        return np.array(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def _inside_convex(hull, uv):
    if len(hull) < 3:
        return np.zeros(uv.shape[:-1], dtype=bool)
    inside = np.ones(uv.shape[:-1], dtype=bool)
    for k in range(len(hull)):
        a, b = hull[k], hull[(k + 1) % len(hull)]
        cr = (b[0] - a[0]) * (uv[..., 1] - a[1]) - (b[1] - a[1]) * (uv[..., 0] - a[0])
        inside &= cr >= 0
    return inside


def box_silhouette(box, camera):
    """Filled image-plane silhouette of a 3D box, clipped at the near plane."""
    pc = camera.world_to_camera(box_corners(box))
    front = pc[:, 2] > NEAR
    if not front.any():
        return None
    pts = [pc[front]]
    for i, j in _EDGES:
        if front[i] != front[j]:
            a, b = pc[i], pc[j]
            s = (NEAR - a[2]) / (b[2] - a[2])
            pts.append((a + s * (b - a))[None])
    hull = _convex_hull(camera.project(np.concatenate(pts)))
    return _inside_convex(hull, camera.pixel_grid())


def _segment_distance(uv, a, b):
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0:
        return np.linalg.norm(uv - a, axis=-1)
    s = np.clip(((uv - a) @ ab) / denom, 0.0, 1.0)
    return np.linalg.norm(uv - (a + s[..., None] * ab), axis=-1)


def rasterize_conditions(scene, camera, t, boxes=None):
    """Per-view box raster (per-class intensity) and lane raster, both (H, W, 1) in [0, 1]."""
    H, W = camera.height, camera.width
    box_r = np.zeros((H, W), dtype=np.float64)
    lane_r = np.zeros((H, W), dtype=np.float64)
    if boxes is None:
        boxes = scene_boxes(scene, t)
    for box in boxes:
        sil = box_silhouette(box, camera)
        if sil is None:
            continue  # fully behind the camera
        box_r = np.where(sil, np.maximum(box_r, (box[7] + 1) / N_CLASSES), box_r)

    uv = camera.pixel_grid()
    for lane in scene.lanes:
        pc = camera.world_to_camera(lane)
        for a, b in zip(pc[:-1], pc[1:]):
            if a[2] <= NEAR and b[2] <= NEAR:
                continue
            if a[2] <= NEAR or b[2] <= NEAR:
                s = (NEAR - a[2]) / (b[2] - a[2])
                cut = a + s * (b - a)
                if a[2] <= NEAR:
                    a = cut
                else:
                    b = cut
            pa, pb = camera.project(np.stack([a, b]))
            lane_r[_segment_distance(uv, pa, pb) <= LANE_STROKE / 2] = 1.0
    return box_r[..., None].astype(np.float32), lane_r[..., None].astype(np.float32)
