"""Directional ablations: reference-frame count and latent space (plain vs Gaussian-trained VAE)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluate import frechet_report
from .generate import REF_CHOICES, generate


class ComparisonError(ValueError):
    pass


@dataclass
class Arm:
    name: str
    vae: object
    dit: object
    latent_scale: float
    steps: int  # diffusion training steps
    seed: int = 0


def check_equal_steps(arms):
    steps = {a.name: a.steps for a in arms}
    if len(set(steps.values())) > 1:
        raise ComparisonError(f"arms trained for different step counts: {steps}")


def _real(clips):
    return [c.images for c in clips]


def evaluate_arm(arm, clips, evaluator, n_ref=0, sample_steps=50, seed=0):
    gen = generate(arm.vae, arm.dit, arm.latent_scale, clips, n_ref=n_ref, steps=sample_steps, seed=seed)
    return frechet_report(_real(clips), list(gen.videos), evaluator,
                          meta={"arm": arm.name, "n_ref": n_ref, "train_seed": arm.seed, "train_steps": arm.steps})


def ablate_ref_frames(arms, clips, evaluator, sample_steps=50, n_refs=REF_CHOICES):
    """Per n_ref: list of reports, one per arm (arms differ only in training seed)."""
    check_equal_steps(arms)
    return {k: [evaluate_arm(a, clips, evaluator, k, sample_steps, seed=a.seed) for a in arms] for k in n_refs}


def ablate_storm_vae(arms_by_name, clips, evaluator, sample_steps=50, n_ref=0):
    """arms_by_name maps an arm label to its per-seed Arms; every arm must share one step count."""
    check_equal_steps([a for arms in arms_by_name.values() for a in arms])
    return {name: [evaluate_arm(a, clips, evaluator, n_ref, sample_steps, seed=a.seed) for a in arms]
            for name, arms in arms_by_name.items()}


def run_ablation(name, *args, **kwargs):
    if name == "ref_frames":
        return ablate_ref_frames(*args, **kwargs)
    if name == "storm_vae":
        return ablate_storm_vae(*args, **kwargs)
    raise ValueError(f"unknown ablation {name!r}")


def summarize(reports, key):
    vals = np.array([r.metrics[key] for r in reports], dtype=np.float64)
    std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return float(vals.mean()), std


def beats_by_margin(better, worse, key):
    """Lower-is-better: mean gap must exceed the larger across-seed standard deviation."""
    mb, sb = summarize(better, key)
    mw, sw = summarize(worse, key)
    return (mw - mb) > max(sb, sw), mw - mb, max(sb, sw)


def format_table(results, keys=("frechet_image", "frechet_video")):
    """Rows per setting, columns mean ± std over seeds."""
    header = "| setting | " + " | ".join(keys) + " |"
    lines = [header, "|" + "---|" * (len(keys) + 1)]
    for setting, reports in results.items():
        cells = []
        for k in keys:
            m, s = summarize(reports, k)
            cells.append(f"{m:.4f} ± {s:.4f}")
        lines.append(f"| {setting} | " + " | ".join(cells) + " |")
    return "\n".join(lines)
