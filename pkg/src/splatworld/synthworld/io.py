"""On-disk dataset layout.

    <root>/manifest.json              clip ids and their split
    <root>/<clip_id>/images.bin       flat little-endian array, header in images.hdr
    <root>/<clip_id>/depth.bin        (+inf marks sky)
    <root>/<clip_id>/box_raster.bin
    <root>/<clip_id>/lane_raster.bin
    <root>/<clip_id>/meta.json        cameras, timestamps, text tokens, boxes, lanes, view mask

A ``.hdr`` file is three ``key: value`` lines: ``shape`` (space separated ints),
``dtype`` (numpy name) and ``scale`` (stored = value * scale; always 1 here).
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .cameras import CameraModel
from .conditions import SceneConditions
from .render import MultiViewClip

ARRAYS = ("images", "depth", "box_raster", "lane_raster")


class DatasetError(OSError):
    pass


def write_array(path, arr, scale=1.0):
    path = Path(path)
    arr = np.ascontiguousarray(arr)
    dtype = arr.dtype.newbyteorder("<")
    arr.astype(dtype, copy=False).tofile(path.with_suffix(".bin"))
    shape = " ".join(str(s) for s in arr.shape)
    path.with_suffix(".hdr").write_text(f"shape: {shape}\ndtype: {arr.dtype.name}\nscale: {scale!r}\n")


def read_array(path):
    path = Path(path)
    header = {}
    for line in path.with_suffix(".hdr").read_text().splitlines():
        if line.strip():
            k, v = line.split(":", 1)
            header[k.strip()] = v.strip()
    shape = tuple(int(s) for s in header["shape"].split())
    dtype = np.dtype(header["dtype"]).newbyteorder("<")
    data = np.fromfile(path.with_suffix(".bin"), dtype=dtype)
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path.name}: expected {np.prod(shape)} values, found {data.size}")
    arr = data.reshape(shape).astype(dtype.newbyteorder("="), copy=False)
    scale = float(header.get("scale", 1.0))
    return arr if scale == 1.0 else arr / scale


def _clip_meta(clip):
    c = clip.conditions
    return {
        "clip_id": clip.clip_id,
        "timestamps": [float(t) for t in clip.timestamps],
        "cameras": [[cam.to_dict() for cam in row] for row in clip.cameras],
        "view_mask": [bool(v) for v in clip.view_mask],
        "text_tokens": [int(x) for x in c.text_tokens],
        "boxes": [np.asarray(b).tolist() for b in c.boxes],
        "lanes": [np.asarray(l).tolist() for l in c.lanes],
        "meta": clip.meta,
    }


def write_clip(clip, root):
    d = Path(root) / clip.clip_id
    d.mkdir(parents=True, exist_ok=True)
    write_array(d / "images", clip.images)
    write_array(d / "depth", clip.depth)
    write_array(d / "box_raster", clip.conditions.box_raster)
    write_array(d / "lane_raster", clip.conditions.lane_raster)
    (d / "meta.json").write_text(json.dumps(_clip_meta(clip), indent=1))


def read_clip(d):
    d = Path(d)
    try:
        meta = json.loads((d / "meta.json").read_text())
        arrays = {name: read_array(d / name) for name in ARRAYS}
        cond = SceneConditions(
            meta["text_tokens"],
            [np.array(b, dtype=np.float64).reshape(-1, 8) for b in meta["boxes"]],
            [np.array(l, dtype=np.float64) for l in meta["lanes"]],
            arrays["box_raster"], arrays["lane_raster"],
        )
        cams = [[CameraModel.from_dict(c) for c in row] for row in meta["cameras"]]
        return MultiViewClip(arrays["images"], arrays["depth"], cams,
                             np.array(meta["timestamps"], dtype=np.float64), cond,
                             np.array(meta["view_mask"], dtype=bool), meta["clip_id"],
                             meta.get("meta", {}))
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DatasetError(f"clip {d.name!r}: cannot read ({exc})") from exc


def write_dataset(clips, path, splits=None):
    """Write clips plus a manifest.  ``splits`` maps clip id -> "train"/"val"."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    splits = splits or {}
    entries = []
    for clip in clips:
        write_clip(clip, root)
        entries.append({"id": clip.clip_id, "split": splits.get(clip.clip_id, "train")})
    manifest = root / "manifest.json"
    if manifest.exists():
        old = {e["id"]: e for e in json.loads(manifest.read_text())["clips"]}
        old.update({e["id"]: e for e in entries})
        entries = list(old.values())
    entries.sort(key=lambda e: e["id"])
    manifest.write_text(json.dumps({"clips": entries}, indent=1))


def list_clips(path, split=None):
    root = Path(path)
    manifest = root / "manifest.json"
    if manifest.exists():
        entries = json.loads(manifest.read_text())["clips"]
        ids = [e["id"] for e in entries if split is None or e["split"] == split]
    else:
        if split is not None:
            raise DatasetError(f"{root}: no manifest, cannot select split {split!r}")
        ids = [p.name for p in root.iterdir() if (p / "meta.json").exists()] if root.is_dir() else []
    return sorted(ids)


def read_dataset(path, split=None):
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    ids = list_clips(root, split)
    if not ids:
        raise DatasetError(f"{root}: no clips found")
    return [read_clip(root / i) for i in ids]


class LazyDataset:
    """Index-addressable view over a dataset directory that reads clips on demand."""

    def __init__(self, path, split=None):
        self.root = Path(path)
        self.ids = list_clips(self.root, split)
        if not self.ids:
            raise DatasetError(f"{self.root}: no clips found")

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i):
        return read_clip(self.root / self.ids[i])
