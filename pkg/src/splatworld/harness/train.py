"""Two-stage training: dual-decoder VAE first, then latent diffusion on its frozen encoder."""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np
import torch

from ..cvdiffusion import (NULL_TOKEN, ConditionBundle, DiffusionConfig, VideoDiT, block_dropout,
                           control_from_rasters, flow_loss, make_flow_sample)
from ..gsvae import DualDecoderVAE, VAEConfig, clip_losses
from ..splatcore import DecodeError
from ..synthworld import read_dataset
from .checkpoint import checkpoint_payload, model_from_checkpoint, save_checkpoint
from .config import build_dataclass, seed_everything

log = logging.getLogger(__name__)
REF_COUNTS = (0, 1, 3)


class TrainingError(RuntimeError):
    pass


def cosine_lr(step, total, lr, min_lr, warmup=0):
    if warmup and step < warmup:
        return lr * (step + 1) / warmup
    frac = min(max(step - warmup, 0) / max(total - warmup, 1), 1.0)
    return min_lr + 0.5 * (lr - min_lr) * (1 + math.cos(math.pi * frac))


def make_optimizer(params, cfg):
    return torch.optim.AdamW(params, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)


def _load_clips(cfg, clips):
    if clips is not None:
        return list(clips)
    clips = read_dataset(cfg.dataset, split="train")
    if not clips:
        raise TrainingError(f"no training clips under {cfg.dataset}")
    return clips


class _Logger:
    def __init__(self, out_dir):
        self.path = None
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            self.path = os.path.join(out_dir, "log.jsonl")
            open(self.path, "w").close()

    def write(self, record):
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(record) + "\n")


@dataclass
class TrainResult:
    model: torch.nn.Module
    history: list  # per-step dicts of loss components
    checkpoint: dict
    path: str = None


def _finish(kind, model, cfg, history, opt, extra, out_dir):
    payload = checkpoint_payload(kind, model, len(history), cfg, extra)
    path = None
    if out_dir:
        path = os.path.join(out_dir, f"{kind}_final.pt")
        save_checkpoint(payload, path)
    return TrainResult(model, history, payload, path)


def _maybe_checkpoint(kind, model, cfg, step, extra, out_dir):
    if out_dir and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
        save_checkpoint(checkpoint_payload(kind, model, step, cfg, extra), os.path.join(out_dir, f"{kind}_{step:07d}.pt"))


def _nan_abort(out_dir, step, batch_ids, parts):
    msg = f"non-finite loss at step {step} on batch {batch_ids}: {parts}"
    if out_dir:
        with open(os.path.join(out_dir, f"nan_dump_{step:07d}.json"), "w") as f:
            json.dump({"step": step, "batch": batch_ids, "parts": parts}, f, indent=1)
    raise TrainingError(msg)


def train_vae(cfg, clips=None, out_dir=None, model=None):
    """Jointly optimise encoder, image decoder and Gaussian decoder."""
    seed_everything(cfg.seed)
    clips = _load_clips(cfg, clips)
    vcfg = build_dataclass(VAEConfig, cfg.vae)
    model = model or DualDecoderVAE(vcfg)
    model.train()
    opt = make_optimizer(model.parameters(), cfg)
    rng = np.random.default_rng(cfg.seed)
    logger = _Logger(out_dir)
    history = []
    order = []
    for step in range(1, cfg.max_steps + 1):
        lr = cosine_lr(step - 1, cfg.max_steps, cfg.lr, cfg.min_lr, cfg.warmup_steps)
        for group in opt.param_groups:
            group["lr"] = lr
        opt.zero_grad(set_to_none=True)
        batch_ids, total, parts_sum = [], 0.0, {}
        for b in range(cfg.batch_size):
            if not order:
                order = list(rng.permutation(len(clips)))
            clip = clips[order.pop()]
            batch_ids.append(clip.clip_id)
            try:
                loss, parts = clip_losses(model, clip, rng, seed=cfg.seed * 1000003 + step * 64 + b)
            except DecodeError as e:  # non-finite Gaussian channels
                _nan_abort(out_dir, step, batch_ids, {"error": str(e)})
            (loss / cfg.batch_size).backward()
            total += float(loss.detach()) / cfg.batch_size
            for k, v in parts.items():
                parts_sum[k] = parts_sum.get(k, 0.0) + float(v) / cfg.batch_size
        record = {"step": step, "lr": lr, "loss": total, **parts_sum}
        if not all(math.isfinite(v) for v in record.values()):
            _nan_abort(out_dir, step, batch_ids, record)
        if cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        opt.step()
        history.append(record)
        logger.write(record)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("vae step %d loss %.5f", step, total)
        _maybe_checkpoint("vae", model, cfg, step, {}, out_dir)
    model.eval()
    return _finish("vae", model, cfg, history, opt, {}, out_dir)


@dataclass
class LatentClip:
    clip_id: str
    latents: torch.Tensor  # (T, V, C, h, w), scaled
    control: torch.Tensor  # (T, V, 2, h, w)
    text_tokens: torch.Tensor  # (L,)
    view_mask: torch.Tensor  # (V,)


@torch.no_grad()
def encode_clip(vae, clip):
    """Posterior means of every frame/view, (T, V, C, h, w)."""
    return vae.encode(torch.as_tensor(clip.images)).mean


@torch.no_grad()
def prepare_latents(vae, clips, latent_scale=None):
    raw = [encode_clip(vae, c) for c in clips]
    if latent_scale is None:
        latent_scale = float(1.0 / torch.cat([r.flatten() for r in raw]).std())
    out = []
    for c, r in zip(clips, raw):
        hw = tuple(r.shape[-2:])
        out.append(LatentClip(c.clip_id, r * latent_scale,
                              control_from_rasters(c.conditions.box_raster, c.conditions.lane_raster, hw),
                              torch.as_tensor(np.asarray(c.conditions.text_tokens), dtype=torch.long),
                              torch.as_tensor(np.asarray(c.view_mask), dtype=torch.bool)))
    return out, latent_scale


def bundle(items, ref_counts=None, drop_cond=None):
    """Stack LatentClips into (z0, ConditionBundle)."""
    z0 = torch.stack([it.latents for it in items])
    control = torch.stack([it.control for it in items])
    text = torch.stack([it.text_tokens for it in items])
    B, T = z0.shape[:2]
    ref = torch.zeros(B, T, dtype=torch.bool)
    for i, k in enumerate(ref_counts or [0] * B):
        ref[i, :k] = True
    if drop_cond is not None:
        for i, d in enumerate(drop_cond):
            if d:
                text[i] = 0
                text[i, 0] = NULL_TOKEN
                control[i] = 0
    return z0, ConditionBundle(text, control, ref, torch.stack([it.view_mask for it in items]))


def _frozen_encoder_check(vae):
    for name, p in vae.encoder.named_parameters():
        if p.requires_grad or (p.grad is not None and bool(p.grad.abs().sum() != 0)):
            raise AssertionError(f"encoder parameter {name} is not frozen")


def train_diffusion(cfg, vae_checkpoint, clips=None, out_dir=None, predictor=None):
    """Flow-matching training on frozen-encoder latents.

    ``predictor`` replaces the network by a callable (flow_sample, cond, blocks)
    for sanity runs; no parameters are updated then.
    """
    seed_everything(cfg.seed)
    vae, vae_payload = model_from_checkpoint(vae_checkpoint)
    vae.requires_grad_(False)
    clips = _load_clips(cfg, clips)
    items, scale = prepare_latents(vae, clips)
    C, h, w = items[0].latents.shape[-3:]
    dcfg = build_dataclass(DiffusionConfig, {"latent_channels": C, "latent_hw": [h, w],
                                             "max_frames": max(19, items[0].latents.shape[0]), **cfg.diffusion})
    model = VideoDiT(dcfg)
    model.train()
    opt = make_optimizer(model.parameters(), cfg) if predictor is None else None
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    logger = _Logger(out_dir)
    extra = {"latent_scale": scale, "vae_step": int(vae_payload["step"]),
             "vae_config": vae_payload["model_config"]}
    history, order = [], []
    for step in range(1, cfg.max_steps + 1):
        lr = cosine_lr(step - 1, cfg.max_steps, cfg.lr, cfg.min_lr, cfg.warmup_steps)
        batch = []
        for _ in range(cfg.batch_size):
            if not order:
                order = list(rng.permutation(len(items)))
            batch.append(items[order.pop()])
        refs = [int(rng.choice(REF_COUNTS, p=cfg.ref_probs)) for _ in batch]
        drop = [bool(rng.random() < dcfg.p_uncond) for _ in batch]
        blocks = block_dropout(dcfg.p_temporal, dcfg.p_crossview, generator=rng)
        z0, cond = bundle(batch, refs, drop)
        sample = make_flow_sample(z0, generator=gen, dist=dcfg.t_dist)
        if predictor is not None:
            pred = predictor(sample, cond, blocks)
        else:
            pred = model(sample.z_t, sample.t, cond, blocks)
        loss = flow_loss(pred, sample, cond.ref_mask, cond.view_mask)
        record = {"step": step, "lr": lr, "loss": float(loss.detach()), "refs": refs,
                  "temporal": blocks.temporal, "crossview": blocks.crossview}
        if not math.isfinite(record["loss"]):
            _nan_abort(out_dir, step, [b.clip_id for b in batch], record)
        if opt is not None:
            for group in opt.param_groups:
                group["lr"] = lr
            opt.zero_grad(set_to_none=True)
            loss.backward()
            _frozen_encoder_check(vae)
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
        history.append(record)
        logger.write(record)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("diffusion step %d loss %.5f", step, record["loss"])
        _maybe_checkpoint("diffusion", model, cfg, step, extra, out_dir)
    model.eval()
    return _finish("diffusion", model, cfg, history, opt, extra, out_dir)
