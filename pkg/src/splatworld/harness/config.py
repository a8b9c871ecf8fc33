"""Run configuration, strict mode and seeding."""
from __future__ import annotations

import os
import random
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch
import yaml

STRICT_ENV = "SPLATWORLD_STRICT"


@dataclass
class RunConfig:
    dataset: str = "data"
    stage: str = "vae"  # vae | diffusion
    out_dir: str = "runs/default"
    seed: int = 0
    max_steps: int = 1000
    batch_size: int = 1
    lr: float = 6e-5
    min_lr: float = 1e-7
    warmup_steps: int = 0
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    grad_clip: float = 1.0
    checkpoint_every: int = 500
    log_every: int = 10
    vae: dict = field(default_factory=dict)  # VAEConfig overrides
    diffusion: dict = field(default_factory=dict)  # DiffusionConfig overrides
    ref_probs: tuple = (0.3, 0.2, 0.5)  # reference-frame counts 0, 1, 3
    sample_steps: int = 50
    guidance_scale: float = 1.0

    def __post_init__(self):
        if self.stage not in ("vae", "diffusion"):
            raise ValueError(f"stage must be 'vae' or 'diffusion', got {self.stage!r}")
        if not self.lr > self.min_lr > 0:
            raise ValueError("need lr > min_lr > 0")
        if len(self.ref_probs) != 3 or abs(sum(self.ref_probs) - 1) > 1e-9:
            raise ValueError("ref_probs must be three probabilities summing to 1")
        self.betas = tuple(self.betas)
        self.ref_probs = tuple(self.ref_probs)

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["ref_probs"] = list(self.ref_probs)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw):
        d = self.to_dict()
        d.update(kw)
        return RunConfig.from_dict(d)


def load_config(path, **overrides):
    with open(path) as f:
        d = yaml.safe_load(f) or {}
    d.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(d)


def save_config(cfg, path):
    with open(path, "w") as f:
        yaml.safe_dump(cfg.to_dict(), f, sort_keys=True)


def strict_mode():
    return os.environ.get(STRICT_ENV, "0") not in ("", "0", "false", "False")


def seed_everything(seed):
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)
    if strict_mode():
        torch.use_deterministic_algorithms(True)


def build_dataclass(cls, overrides):
    known = {f.name for f in fields(cls)}
    unknown = set(overrides) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
    return cls(**kw)
