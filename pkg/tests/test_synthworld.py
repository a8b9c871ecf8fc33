import math

import numpy as np
import pytest

from splatworld.synthworld import (CameraModel, Complexity, ConfigurationError, DatasetError, Primitive, SceneSpec,
                                   camera_at_ego_pose, make_camera_rig, raytrace_view, read_dataset, render_clip,
                                   sample_scene, sparsify_depth, synthesize, write_dataset)
from splatworld.synthworld.conditions import box_corners, rasterize_conditions, scene_boxes
from splatworld.synthworld.render import GROUND_ID, SKY_ID, default_timestamps, trace

from conftest import static_complexity


def identity_camera(H=64, W=64, fov=90):
    return make_camera_rig(1, fov, H, W)[0]


def empty_scene(**kw):
    return SceneSpec(primitives=[], ground_height=1e6, lanes=[], **kw)


def sphere(center, r=1.0, velocity=(0, 0, 0), albedo=(0.8, 0.2, 0.2)):
    return Primitive("sphere", np.array(center, float), np.array([r, r, r]), np.array(albedo),
                     np.array(velocity, float), 2, 0.0)


def box(center, half, yaw=0.0, velocity=(0, 0, 0), class_id=0):
    return Primitive("box", np.array(center, float), np.array(half, float), np.array([0.2, 0.6, 0.3]),
                     np.array(velocity, float), class_id, yaw)


# cameras

def test_rig_single_camera_focal():
    (cam,) = make_camera_rig(1, 90, 64, 64)
    assert cam.fx == pytest.approx(32.0) and cam.fy == pytest.approx(32.0)


def test_rig_six_views_yaw_spacing():
    rig = make_camera_rig(6, 60, 64, 64)
    yaws = [math.degrees(math.atan2(c.forward[0], c.forward[2])) % 360 for c in rig]
    np.testing.assert_allclose(yaws, [0, 60, 120, 180, 240, 300], atol=1e-9)


def test_rig_two_views_opposite():
    a, b = make_camera_rig(2, 90, 32, 32)
    np.testing.assert_allclose(a.forward + b.forward, 0, atol=1e-12)
    np.testing.assert_allclose(a.center, b.center)


@pytest.mark.parametrize("args", [(1, 5, 32, 32), (1, 130, 32, 32), (0, 90, 32, 32), (1, 90, 0, 32)])
def test_rig_invalid_config(args):
    with pytest.raises(ConfigurationError):
        make_camera_rig(*args)


def test_camera_invariants_enforced():
    with pytest.raises(ValueError):
        CameraModel(10, 10, 5, 5, np.array([1.0, 0.1, 0, 0]), np.zeros(3), 10, 10)
    with pytest.raises(ValueError):
        CameraModel(-1, 10, 5, 5, np.array([1.0, 0, 0, 0]), np.zeros(3), 10, 10)
    with pytest.raises(ValueError):
        CameraModel(10, 10, 10, 5, np.array([1.0, 0, 0, 0]), np.zeros(3), 10, 10)


def test_pose_composition_keeps_unit_quaternion():
    rng = np.random.default_rng(0)
    for cam in make_camera_rig(6, 70, 32, 32):
        for _ in range(20):
            c = camera_at_ego_pose(cam, rng.normal(size=3) * 10, rng.uniform(-7, 7))
            assert abs(np.linalg.norm(c.quat) - 1) < 1e-6


def test_camera_dict_roundtrip():
    cam = camera_at_ego_pose(make_camera_rig(3, 70, 24, 32)[1], np.array([1.0, 0, 2]), 0.3)
    assert CameraModel.from_dict(cam.to_dict()) == cam


# scenes

def test_scene_deterministic():
    a, b = sample_scene(5), sample_scene(5)
    assert a.to_dict() == b.to_dict()


def test_scene_seeds_differ():
    a, b = sample_scene(0), sample_scene(1)
    assert [p.to_dict() for p in a.primitives] != [p.to_dict() for p in b.primitives]


def test_scene_primitive_count_range_collapse():
    s = sample_scene(3, Complexity(n_primitives=(3, 3)))
    assert len(s.primitives) == 3


@pytest.mark.parametrize("seed", range(10))
def test_scene_invariants(seed):
    cx = Complexity()
    s = sample_scene(seed, cx)
    assert len(s.primitives) >= 1
    for p in s.primitives:
        assert np.linalg.norm(p.velocity) <= cx.v_max + 1e-12
        # above (not below) the ground plane y = ground_height; y points down
        assert p.center[1] + p.half_extent[1] <= s.ground_height + 1e-9


def test_scene_dict_roundtrip():
    s = sample_scene(11)
    assert SceneSpec.from_dict(s.to_dict()).to_dict() == s.to_dict()


def test_invalid_complexity():
    with pytest.raises(ConfigurationError):
        sample_scene(0, Complexity(n_primitives=(5, 2)))


# ray tracing

def test_sphere_depth_central_pixel():
    cam = identity_camera()
    img, depth = raytrace_view(SceneSpec([sphere((0, 0, 5))], ground_height=1e6), cam, 0.0)
    assert depth[32, 32] == pytest.approx(4.0, abs=1e-5)


def test_sphere_linear_motion():
    cam = identity_camera()
    moving = SceneSpec([sphere((0, 0, 5), velocity=(1, 0, 0))], ground_height=1e6)
    fixed = SceneSpec([sphere((2, 0, 5))], ground_height=1e6)
    _, d1 = raytrace_view(moving, cam, 2.0)
    _, d2 = raytrace_view(fixed, cam, 0.0)
    np.testing.assert_array_equal(d1, d2)


def test_empty_scene_is_sky():
    scene = empty_scene(sky_color=np.array([0.1, 0.2, 0.3]))
    img, depth = raytrace_view(scene, identity_camera(16, 16), 0.0)
    assert np.all(np.isinf(depth))
    np.testing.assert_allclose(img, np.broadcast_to(np.float32([0.1, 0.2, 0.3]), img.shape))


@pytest.mark.parametrize("seed", range(4))
def test_finite_depth_iff_hit(seed):
    scene = sample_scene(seed)
    cam = make_camera_rig(4, 90, 24, 24)[seed % 4]
    img, depth, hit = trace(scene, cam, 1.0)
    assert np.array_equal(np.isfinite(depth), hit != SKY_ID)
    assert np.all(depth[np.isfinite(depth)] > 0)
    sky = np.isinf(depth)
    np.testing.assert_allclose(img[sky], np.broadcast_to(scene.sky_color, img[sky].shape))


def test_ground_visible_below_horizon():
    scene = SceneSpec([], ground_height=1.5)
    _, depth, hit = trace(scene, identity_camera(32, 32), 0.0)
    assert np.all(hit[-1] == GROUND_ID)
    # bottom-row centre pixel: ray (0, 15/16, 1) reaches y = 1.5 at parameter 1.6
    assert depth[31, 16] == pytest.approx(1.6 * math.sqrt(1 + (15 / 16) ** 2), rel=1e-6)


# clips

def test_render_clip_static_time_invariance():
    scene = sample_scene(2, static_complexity())
    clip = render_clip(scene, make_camera_rig(2, 90, 16, 16), default_timestamps(19))
    assert clip.n_frames == 19
    np.testing.assert_array_equal(clip.images[0], clip.images[-1])
    np.testing.assert_array_equal(clip.depth[0], clip.depth[-1])


def test_render_clip_rejects_unsorted_timestamps():
    with pytest.raises(ValueError):
        render_clip(sample_scene(0), make_camera_rig(1, 90, 8, 8), [0.0, 0.5, 0.5])


def test_moving_sphere_box_centroid_monotone():
    scene = SceneSpec([sphere((-3, 0, 8), r=0.8, velocity=(1.0, 0, 0))], ground_height=1e6)
    clip = render_clip(scene, make_camera_rig(1, 90, 32, 32), np.arange(7) * 1.0)
    xs = []
    for t in range(clip.n_frames):
        r = clip.conditions.box_raster[t, 0, ..., 0]
        assert r.sum() > 0
        xs.append((r * np.arange(32)[None]).sum() / r.sum())
    assert np.all(np.diff(xs) > 0)


def test_images_and_depth_contract(tiny_clips):
    for c in tiny_clips:
        assert c.images.dtype == np.float32 and np.isfinite(c.images).all()
        assert c.images.min() >= 0 and c.images.max() <= 1
        finite = np.isfinite(c.depth)
        assert np.all(c.depth[finite] > 0)
        assert np.all(np.isposinf(c.depth[~finite]))


# conditions

def test_conditions_empty():
    box_r, lane_r = rasterize_conditions(empty_scene(), identity_camera(16, 16), 0.0)
    assert not box_r.any() and not lane_r.any()


def test_box_on_axis_marks_centre():
    scene = SceneSpec([box((0, 0, 6), (1, 1, 1))], ground_height=1e6)
    box_r, _ = rasterize_conditions(scene, identity_camera(32, 32), 0.0)
    assert box_r[16, 16, 0] > 0
    assert box_r.max() <= 1 and box_r.min() >= 0


def test_box_behind_camera_skipped():
    scene = SceneSpec([box((0, 0, -6), (1, 1, 1))], ground_height=1e6)
    box_r, _ = rasterize_conditions(scene, identity_camera(32, 32), 0.0)
    assert not box_r.any()


def test_lanes_rasterized():
    scene = sample_scene(4)
    _, lane_r = rasterize_conditions(scene, identity_camera(32, 32), 0.0)
    assert lane_r.any() and lane_r.max() <= 1


@pytest.mark.parametrize("seed", range(5))
def test_boxes_enclose_primitives(seed):
    scene = sample_scene(seed)
    for t in (0.0, 4.5, 9.0):
        b = scene_boxes(scene, t)
        for p, row in zip(scene.primitives, b):
            corners = box_corners(row)
            lo, hi = corners.min(0), corners.max(0)
            c = p.center_at(t)
            assert np.all(c - 1e-9 >= lo) and np.all(c + 1e-9 <= hi)
            np.testing.assert_allclose(row[:3], c)


def _primitive_mask(scene, cam, t, i):
    _, _, hit = trace(scene, cam, t)
    return hit == i


def test_box_raster_matches_silhouette_iou():
    """Projected box raster vs ray-traced silhouette of an unoccluded box primitive, 20 random scenes."""
    ious = []
    rng = np.random.default_rng(0)
    for k in range(20):
        s = sample_scene(100 + k, Complexity(n_primitives=(1, 1), sphere_prob=0.0))
        s.lanes = []
        s.ground_height = 1e6
        p = s.primitives[0]
        # view straight at the primitive so it is unoccluded and in frame
        yaw = math.atan2(p.center[0], p.center[2])
        cam = camera_at_ego_pose(make_camera_rig(1, 90, 48, 48)[0], np.zeros(3), yaw)
        t = float(rng.uniform(0, 2))
        box_r, _ = rasterize_conditions(s, cam, t)
        raster = box_r[..., 0] > 0
        sil = _primitive_mask(s, cam, t, 0)
        if sil.sum() < 4:
            continue
        ious.append((raster & sil).sum() / (raster | sil).sum())
    assert len(ious) >= 15
    assert min(ious) >= 0.7, ious


# io

def test_dataset_roundtrip_bit_exact(tmp_path, tiny_clips):
    write_dataset(tiny_clips[:1], tmp_path)
    (back,) = read_dataset(tmp_path)
    c = tiny_clips[0]
    assert back.clip_id == c.clip_id
    np.testing.assert_array_equal(back.images, c.images)
    np.testing.assert_array_equal(back.depth, c.depth)
    assert back.cameras == c.cameras
    np.testing.assert_array_equal(back.timestamps, c.timestamps)
    np.testing.assert_array_equal(back.conditions.box_raster, c.conditions.box_raster)
    np.testing.assert_array_equal(back.conditions.lane_raster, c.conditions.lane_raster)
    assert list(back.conditions.text_tokens) == list(c.conditions.text_tokens)
    np.testing.assert_array_equal(back.view_mask, c.view_mask)


def test_read_empty_directory(tmp_path):
    with pytest.raises(DatasetError, match="no clips found"):
        read_dataset(tmp_path)


def test_five_clips_sorted(tmp_path):
    clips, _ = synthesize(1, 5, n_views=1, n_frames=4, H=8, W=8)
    write_dataset(list(reversed(clips)), tmp_path)
    back = read_dataset(tmp_path)
    assert [c.clip_id for c in back] == sorted(c.clip_id for c in clips)


def test_corrupt_clip_named(tmp_path, tiny_clips):
    write_dataset(tiny_clips[:2], tmp_path)
    victim = tiny_clips[1].clip_id
    for f in (tmp_path / victim).iterdir():
        if f.name.startswith("images"):
            f.write_bytes(b"garbage")
    with pytest.raises(DatasetError, match=victim):
        read_dataset(tmp_path)


def test_synth_deterministic():
    a, _ = synthesize(3, 2, n_views=2, n_frames=3, H=8, W=8)
    b, _ = synthesize(3, 2, n_views=2, n_frames=3, H=8, W=8)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.images, y.images)
        np.testing.assert_array_equal(x.depth, y.depth)


def test_sparsify_depth():
    d = np.ones((50, 50), np.float32)
    s = sparsify_depth(d, 0.3, seed=1)
    frac = np.isfinite(s).mean()
    assert 0.25 < frac < 0.35
    np.testing.assert_array_equal(s, sparsify_depth(d, 0.3, seed=1))
