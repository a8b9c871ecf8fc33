"""Lossless image export: RGB PNG sequences, contact sheets, 16-bit depth."""
from __future__ import annotations

import json
import os

import numpy as np
from PIL import Image

DEPTH_SCALE = 1000.0  # stored value = metres * scale; 0 means no depth


def to_uint8(img):
    return (np.clip(np.asarray(img, dtype=np.float64), 0, 1) * 255 + 0.5).astype(np.uint8)


def save_png(img, path):
    Image.fromarray(to_uint8(img)).save(path)


def save_depth_png(depth, path, scale=DEPTH_SCALE):
    d = np.asarray(depth, dtype=np.float64)
    q = np.where(np.isfinite(d) & (d > 0), np.round(d * scale), 0)
    Image.fromarray(np.clip(q, 0, 65535).astype(np.uint16)).save(path)
    return scale


def load_depth_png(path, scale=DEPTH_SCALE):
    q = np.asarray(Image.open(path)).astype(np.float64)
    return np.where(q > 0, q / scale, np.nan)


def contact_sheet(video):
    """(T, V, H, W, 3) -> one image with views along x and frames along y."""
    T, V, H, W, _ = video.shape
    return np.asarray(video).transpose(0, 2, 1, 3, 4).reshape(T * H, V * W, 3)


def write_video(video, out_dir, depth=None, depth_scale=DEPTH_SCALE):
    """Per-view PNG sequences view_{v}/frame_{t}.png plus contact_sheet.png."""
    os.makedirs(out_dir, exist_ok=True)
    T, V = video.shape[:2]
    for v in range(V):
        vd = os.path.join(out_dir, f"view_{v}")
        os.makedirs(vd, exist_ok=True)
        for t in range(T):
            save_png(video[t, v], os.path.join(vd, f"frame_{t:04d}.png"))
            if depth is not None:
                save_depth_png(depth[t, v], os.path.join(vd, f"depth_{t:04d}.png"), depth_scale)
    save_png(contact_sheet(video), os.path.join(out_dir, "contact_sheet.png"))
    if depth is not None:
        with open(os.path.join(out_dir, "depth_scale.json"), "w") as f:
            json.dump({"depth_scale": depth_scale, "unit": "metres", "zero_means": "no depth"}, f)
