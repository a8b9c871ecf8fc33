"""Procedural dynamic scenes: rigid primitives on a checker ground, lanes, sky."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cameras import ConfigurationError

# toy text vocabulary; token id = list index
VOCAB = [
    "<pad>", "<null>",
    "clear", "cloudy", "overcast",
    "day", "dusk", "night",
    "few", "some", "many",
    "static", "moving",
]
TOKEN = {w: i for i, w in enumerate(VOCAB)}

N_CLASSES = 3  # 0 car-like box, 1 truck-like box, 2 sphere

SKY_COLORS = {
    ("clear", "day"): (0.55, 0.72, 0.95),
    ("cloudy", "day"): (0.72, 0.75, 0.80),
    ("overcast", "day"): (0.62, 0.63, 0.66),
    ("clear", "dusk"): (0.92, 0.62, 0.42),
    ("cloudy", "dusk"): (0.75, 0.55, 0.50),
    ("overcast", "dusk"): (0.55, 0.45, 0.45),
    ("clear", "night"): (0.08, 0.10, 0.25),
    ("cloudy", "night"): (0.12, 0.12, 0.18),
    ("overcast", "night"): (0.10, 0.10, 0.12),
}
LIGHT_INTENSITY = {"day": 1.0, "dusk": 0.75, "night": 0.45}


@dataclass
class Primitive:
    shape: str  # "sphere" | "box"
    center: np.ndarray
    half_extent: np.ndarray  # radius repeated for spheres
    albedo: np.ndarray
    velocity: np.ndarray
    class_id: int
    yaw: float = 0.0

    def center_at(self, t):
        return self.center + self.velocity * t

    def to_dict(self):
        return {
            "shape": self.shape,
            "center": [float(x) for x in self.center],
            "half_extent": [float(x) for x in self.half_extent],
            "albedo": [float(x) for x in self.albedo],
            "velocity": [float(x) for x in self.velocity],
            "class_id": int(self.class_id),
            "yaw": float(self.yaw),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["shape"], np.array(d["center"]), np.array(d["half_extent"]),
                   np.array(d["albedo"]), np.array(d["velocity"]), int(d["class_id"]),
                   float(d["yaw"]))


@dataclass
class Complexity:
    n_primitives: tuple = (3, 7)
    v_max: float = 2.0
    n_lanes: tuple = (2, 4)
    ego_speed: tuple = (0.0, 2.0)
    sphere_prob: float = 0.3
    moving_prob: float = 0.5
    placement_radius: tuple = (4.0, 16.0)
    duration: float = 9.0
    clearance: float = 1.0

    def validate(self):
        lo, hi = self.n_primitives
        if not (1 <= lo <= hi):
            raise ConfigurationError("primitive count range must satisfy 1 <= lo <= hi")
        lo, hi = self.n_lanes
        if not (0 <= lo <= hi):
            raise ConfigurationError("lane count range invalid")
        if self.v_max < 0 or self.ego_speed[0] < 0 or self.ego_speed[0] > self.ego_speed[1]:
            raise ConfigurationError("speed bounds invalid")
        if not (0 < self.placement_radius[0] <= self.placement_radius[1]):
            raise ConfigurationError("placement radius invalid")


@dataclass
class SceneSpec:
    primitives: list
    ground_height: float = 1.5
    checker_colors: tuple = ((0.35, 0.35, 0.37), (0.5, 0.5, 0.52))
    checker_size: float = 2.0
    sky_color: np.ndarray = field(default_factory=lambda: np.array([0.55, 0.72, 0.95]))
    light_dir: np.ndarray = field(default_factory=lambda: np.array([0.3, -1.0, 0.5]))
    light_intensity: float = 1.0
    ambient: float = 0.35
    lanes: list = field(default_factory=list)
    lane_color: tuple = (0.9, 0.9, 0.85)
    ego_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ego_yaw: float = 0.0
    weather: str = "clear"
    time_of_day: str = "day"
    draw_distance: float = 50.0
    seed: int = 0

    def ego_pose(self, t):
        return self.ego_velocity * t, self.ego_yaw

    def text_tokens(self):
        n = len(self.primitives)
        count = "few" if n <= 3 else ("some" if n <= 5 else "many")
        moving = any(np.linalg.norm(p.velocity) > 0 for p in self.primitives)
        return [TOKEN[self.weather], TOKEN[self.time_of_day], TOKEN[count],
                TOKEN["moving" if moving else "static"]]

    def to_dict(self):
        return {
            "primitives": [p.to_dict() for p in self.primitives],
            "ground_height": self.ground_height,
            "checker_colors": [list(c) for c in self.checker_colors],
            "checker_size": self.checker_size,
            "sky_color": [float(x) for x in self.sky_color],
            "light_dir": [float(x) for x in self.light_dir],
            "light_intensity": self.light_intensity,
            "ambient": self.ambient,
            "lanes": [np.asarray(l).tolist() for l in self.lanes],
            "lane_color": list(self.lane_color),
            "ego_velocity": [float(x) for x in self.ego_velocity],
            "ego_yaw": self.ego_yaw,
            "weather": self.weather,
            "time_of_day": self.time_of_day,
            "draw_distance": self.draw_distance,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            primitives=[Primitive.from_dict(p) for p in d["primitives"]],
            ground_height=d["ground_height"],
            checker_colors=tuple(tuple(c) for c in d["checker_colors"]),
            checker_size=d["checker_size"],
            sky_color=np.array(d["sky_color"]),
            light_dir=np.array(d["light_dir"]),
            light_intensity=d["light_intensity"],
            ambient=d["ambient"],
            lanes=[np.array(l) for l in d["lanes"]],
            lane_color=tuple(d["lane_color"]),
            ego_velocity=np.array(d["ego_velocity"]),
            ego_yaw=d["ego_yaw"],
            weather=d["weather"],
            time_of_day=d["time_of_day"],
            draw_distance=d["draw_distance"],
            seed=d["seed"],
        )


def _min_distance_to_ego(center, velocity, ego_velocity, duration, n=40):
    ts = np.linspace(0.0, duration, n)
    rel = center[None] + (velocity - ego_velocity)[None] * ts[:, None]
    return np.min(np.hypot(rel[:, 0], rel[:, 2]))


def sample_scene(seed, complexity=None):
    """Deterministically sample a scene from ``seed``."""
    cx = complexity or Complexity()
    cx.validate()
    rng = np.random.default_rng(seed)
    ground = 1.5

    weather = ["clear", "cloudy", "overcast"][rng.integers(3)]
    tod = ["day", "dusk", "night"][rng.choice(3, p=[0.6, 0.25, 0.15])]
    ego_speed = rng.uniform(*cx.ego_speed)
    ego_velocity = np.array([0.0, 0.0, ego_speed])

    n_prim = int(rng.integers(cx.n_primitives[0], cx.n_primitives[1] + 1))
    prims = []
    attempts = 0
    while len(prims) < n_prim:
        attempts += 1
        if attempts > 20000:
            raise ConfigurationError("could not place primitives; placement radius too small")
        if rng.random() < cx.sphere_prob:
            r = rng.uniform(0.4, 1.0)
            half = np.array([r, r, r])
            shape, cls_id, yaw = "sphere", 2, 0.0
        else:
            truck = rng.random() < 0.3
            if truck:
                half = np.array([rng.uniform(1.0, 1.3), rng.uniform(1.2, 1.6), rng.uniform(2.5, 4.0)])
            else:
                half = np.array([rng.uniform(0.8, 1.0), rng.uniform(0.6, 0.85), rng.uniform(1.8, 2.4)])
            shape, cls_id = "box", int(truck)
            yaw = rng.uniform(-math.pi, math.pi)
        ang = rng.uniform(0, 2 * math.pi)
        dist = rng.uniform(*cx.placement_radius)
        center = np.array([dist * math.sin(ang), ground - half[1], dist * math.cos(ang)])
        if rng.random() < cx.moving_prob:
            heading = rng.uniform(0, 2 * math.pi)
            speed = rng.uniform(min(0.3, cx.v_max), cx.v_max)
            velocity = np.array([speed * math.sin(heading), 0.0, speed * math.cos(heading)])
            if shape == "box":
                yaw = heading  # boxes drive along their long (z) axis
        else:
            velocity = np.zeros(3)
        albedo = rng.uniform(0.1, 0.95, size=3)
        # rejection: keep away from the ego path and from other primitives
        reach = float(np.linalg.norm(half[[0, 2]]))
        if _min_distance_to_ego(center, velocity, ego_velocity, cx.duration) < reach + cx.clearance + 0.5:
            continue
        clash = False
        for q in prims:
            other = float(np.linalg.norm(q.half_extent[[0, 2]]))
            if _min_distance_to_ego(center - q.center, velocity - q.velocity, np.zeros(3), cx.duration) < reach + other + 0.2:
                clash = True
                break
        if clash:
            continue
        prims.append(Primitive(shape, center, half, albedo, velocity, cls_id, float(yaw)))

    n_lanes = int(rng.integers(cx.n_lanes[0], cx.n_lanes[1] + 1))
    offsets = rng.permutation(np.array([-5.25, -1.75, 1.75, 5.25, -8.75, 8.75]))[:n_lanes]
    bend = rng.uniform(-0.004, 0.004)
    zs = np.linspace(-30.0, 50.0, 33)
    lanes = [np.stack([o + bend * zs ** 2, np.full_like(zs, ground), zs], axis=-1) for o in sorted(offsets)]

    return SceneSpec(
        primitives=prims,
        ground_height=ground,
        sky_color=np.array(SKY_COLORS[(weather, tod)]),
        light_dir=np.array([rng.uniform(-0.6, 0.6), -1.0, rng.uniform(-0.6, 0.6)]),
        light_intensity=LIGHT_INTENSITY[tod],
        lanes=lanes,
        ego_velocity=ego_velocity,
        weather=weather,
        time_of_day=tod,
        seed=int(seed),
    )
