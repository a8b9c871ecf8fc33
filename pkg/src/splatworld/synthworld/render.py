"""Analytic ray-traced oracle renderer and clip assembly."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cameras import camera_at_ego_pose
from .conditions import SceneConditions, rasterize_conditions, scene_boxes

SKY_ID = -1
GROUND_ID = -2
LANE_HALF_WIDTH = 0.12  # meters


@dataclass
class MultiViewClip:
    images: np.ndarray  # (T, V, H, W, 3) float32 in [0, 1]
    depth: np.ndarray  # (T, V, H, W) float32, +inf for sky
    cameras: list  # T lists of V CameraModel
    timestamps: np.ndarray  # (T,)
    conditions: SceneConditions
    view_mask: np.ndarray = None  # (V,) bool
    clip_id: str = "clip_00000"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.view_mask is None:
            self.view_mask = np.ones(self.images.shape[1], dtype=bool)

    @property
    def n_frames(self):
        return self.images.shape[0]

    @property
    def n_views(self):
        return self.images.shape[1]


def _hit_sphere(o, d, c, r):
    oc = o - c
    b = d @ oc
    cc = oc @ oc - r * r
    disc = b * b - cc
    s = np.full(d.shape[0], np.inf)
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    s1, s2 = -b - sq, -b + sq
    near = np.where(s1 > 1e-9, s1, np.where(s2 > 1e-9, s2, np.inf))
    s[ok] = near[ok]
    with np.errstate(invalid="ignore"):  # inf * 0 on missed rays
        pts = o + s[:, None] * d
    n = (pts - c) / r
    return s, n


def _hit_box(o, d, c, half, yaw):
    cy, sy = np.cos(yaw), np.sin(yaw)
    R = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    ol = (o - c) @ R  # world -> local is R^T
    dl = d @ R
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dl
        t1 = (-half - ol) * inv
        t2 = (half - ol) * inv
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    enter = tmin.max(axis=1)
    exit_ = tmax.min(axis=1)
    axis = tmin.argmax(axis=1)
    hit = (exit_ >= enter) & (exit_ > 1e-9)
    s = np.where(hit, np.where(enter > 1e-9, enter, exit_), np.inf)
    nl = np.zeros_like(dl)
    rows = np.arange(d.shape[0])
    nl[rows, axis] = -np.sign(dl[rows, axis])
    return s, nl @ R.T


def _lane_mask(points, lanes):
    mask = np.zeros(points.shape[0], dtype=bool)
    xz = points[:, [0, 2]]
    for lane in lanes:
        l2 = np.asarray(lane)[:, [0, 2]]
        for a, b in zip(l2[:-1], l2[1:]):
            ab = b - a
            s = np.clip(((xz - a) @ ab) / (ab @ ab), 0.0, 1.0)
            dist = np.linalg.norm(xz - (a + s[:, None] * ab), axis=1)
            mask |= dist <= LANE_HALF_WIDTH
    return mask


def trace(scene, camera, t):
    """Ray trace one view; returns (image, depth, hit_id) in float64."""
    H, W = camera.height, camera.width
    d = camera.ray_directions().reshape(-1, 3)
    o = camera.center
    n_rays = d.shape[0]
    best = np.full(n_rays, np.inf)
    normal = np.zeros((n_rays, 3))
    hit_id = np.full(n_rays, SKY_ID)
    albedo = np.zeros((n_rays, 3))

    for i, p in enumerate(scene.primitives):
        c = p.center_at(t)
        if p.shape == "sphere":
            s, n = _hit_sphere(o, d, c, float(p.half_extent[0]))
        else:
            s, n = _hit_box(o, d, c, p.half_extent, p.yaw)
        closer = s < best
        best = np.where(closer, s, best)
        normal[closer] = n[closer]
        hit_id[closer] = i
        albedo[closer] = p.albedo

    # ground plane y = ground_height (y points down)
    with np.errstate(divide="ignore", invalid="ignore"):
        sg = (scene.ground_height - o[1]) / d[:, 1]
    sg = np.where((d[:, 1] > 0) & (sg > 1e-9), sg, np.inf)
    closer = sg < best
    if closer.any():
        gp = o + sg[closer, None] * d[closer]
        cell = (np.floor(gp[:, 0] / scene.checker_size) + np.floor(gp[:, 2] / scene.checker_size)).astype(int) % 2
        colors = np.asarray(scene.checker_colors)[cell]
        on_lane = _lane_mask(gp, scene.lanes)
        colors[on_lane] = scene.lane_color
        best = np.where(closer, sg, best)
        normal[closer] = np.array([0.0, -1.0, 0.0])
        hit_id[closer] = GROUND_ID
        albedo[closer] = colors

    miss = best > scene.draw_distance
    best[miss] = np.inf
    hit_id[miss] = SKY_ID

    # light_dir points from the surface towards the light (y is down, so the sun has y < 0)
    light = np.asarray(scene.light_dir, dtype=np.float64)
    lambert = np.clip(normal @ (light / np.linalg.norm(light)), 0.0, None)
    shade = scene.light_intensity * (scene.ambient + (1 - scene.ambient) * lambert)
    img = np.clip(albedo * shade[:, None], 0.0, 1.0)
    sky = best == np.inf
    img[sky] = np.asarray(scene.sky_color)
    return img.reshape(H, W, 3), best.reshape(H, W), hit_id.reshape(H, W)


def raytrace_view(scene, camera, t):
    """(image float32 (H, W, 3), depth float32 (H, W) with +inf for sky)."""
    img, depth, _ = trace(scene, camera, t)
    return img.astype(np.float32), depth.astype(np.float32)


def default_timestamps(n_frames=19, dt=0.5):
    return np.arange(n_frames, dtype=np.float64) * dt


def clip_cameras(scene, rig, timestamps):
    cams = []
    for t in timestamps:
        pos, yaw = scene.ego_pose(t)
        cams.append([camera_at_ego_pose(c, pos, yaw) for c in rig])
    return cams


def render_clip(scene, rig, timestamps, clip_id="clip_00000"):
    timestamps = np.asarray(timestamps, dtype=np.float64)
    if np.any(np.diff(timestamps) <= 0):
        raise ValueError("timestamps must be strictly increasing")
    T, V = len(timestamps), len(rig)
    H, W = rig[0].height, rig[0].width
    cams = clip_cameras(scene, rig, timestamps)
    images = np.zeros((T, V, H, W, 3), dtype=np.float32)
    depth = np.zeros((T, V, H, W), dtype=np.float32)
    box_r = np.zeros((T, V, H, W, 1), dtype=np.float32)
    lane_r = np.zeros((T, V, H, W, 1), dtype=np.float32)
    boxes = []
    for ti, t in enumerate(timestamps):
        bt = scene_boxes(scene, t)
        boxes.append(bt)
        for v in range(V):
            images[ti, v], depth[ti, v] = raytrace_view(scene, cams[ti][v], t)
            box_r[ti, v], lane_r[ti, v] = rasterize_conditions(scene, cams[ti][v], t, boxes=bt)
    cond = SceneConditions(scene.text_tokens(), boxes, [np.asarray(l) for l in scene.lanes], box_r, lane_r)
    return MultiViewClip(images, depth, cams, timestamps, cond, np.ones(V, dtype=bool), clip_id,
                         meta={"seed": scene.seed})


def sparsify_depth(depth, keep_fraction, seed=0):
    """LiDAR-like subsampling: dropped pixels become NaN (no measurement)."""
    rng = np.random.default_rng(seed)
    keep = rng.random(depth.shape) < keep_fraction
    return np.where(keep, depth, np.nan).astype(depth.dtype)
