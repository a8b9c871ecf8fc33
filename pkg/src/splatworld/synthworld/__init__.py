import numpy as np

from .cameras import CameraModel, ConfigurationError, camera_at_ego_pose, make_camera_rig
from .conditions import SceneConditions, rasterize_conditions
from .io import DatasetError, LazyDataset, read_dataset, write_dataset
from .render import MultiViewClip, default_timestamps, raytrace_view, render_clip, sparsify_depth, trace
from .scene import Complexity, Primitive, SceneSpec, sample_scene


def synthesize(seed, n_clips, n_views=6, n_frames=19, H=64, W=64, fov_deg=90.0, dt=0.5,
               complexity=None, val_fraction=0.0, resolutions=None):
    """Generate ``n_clips`` clips from consecutive seeds; returns (clips, splits).

    ``resolutions`` is an optional list of ((H, W), probability) pairs; when given,
    each clip draws its own size from it.
    """
    rng = np.random.default_rng(seed)
    clips, splits = [], {}
    n_val = int(round(n_clips * val_fraction))
    for i in range(n_clips):
        h, w = H, W
        if resolutions:
            sizes, probs = zip(*resolutions)
            h, w = sizes[rng.choice(len(sizes), p=probs)]
        scene = sample_scene(seed * 100003 + i, complexity)
        rig = make_camera_rig(n_views, fov_deg, h, w)
        cid = f"clip_{i:05d}"
        clips.append(render_clip(scene, rig, default_timestamps(n_frames, dt), clip_id=cid))
        splits[cid] = "val" if i >= n_clips - n_val else "train"
    return clips, splits


__all__ = [
    "CameraModel", "Complexity", "ConfigurationError", "DatasetError", "LazyDataset",
    "MultiViewClip", "Primitive", "SceneConditions", "SceneSpec", "camera_at_ego_pose",
    "default_timestamps", "make_camera_rig", "rasterize_conditions", "raytrace_view",
    "read_dataset", "render_clip", "sample_scene", "sparsify_depth", "synthesize", "trace",
    "write_dataset",
]
