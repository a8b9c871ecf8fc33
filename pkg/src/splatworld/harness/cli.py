"""Command line entry point: ``splatworld <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from ..synthworld import read_dataset, synthesize, write_dataset
from ..synthworld.io import DatasetError
from .checkpoint import load_checkpoint, model_from_checkpoint
from .config import RunConfig, load_config, save_config

log = logging.getLogger("splatworld")


def _config(args, stage):
    cfg = load_config(args.config) if args.config else RunConfig(stage=stage)
    over = {"dataset": args.dataset, "out_dir": args.out, "max_steps": args.max_steps, "seed": args.seed,
            "stage": stage}
    return cfg.replace(**{k: v for k, v in over.items() if v is not None})


def _clips(dataset, split, clip_ids=None, limit=None):
    clips = read_dataset(dataset, split=split)
    if clip_ids:
        clips = [c for c in clips if c.clip_id in set(clip_ids)]
        if not clips:
            raise DatasetError(f"none of {clip_ids} found in {dataset}")
    return clips[:limit] if limit else clips


def _write_json(obj, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, default=float)


def cmd_synth(args):
    clips, splits = synthesize(args.seed, args.n_clips, n_views=args.views, n_frames=args.frames,
                               H=args.size[0], W=args.size[1], fov_deg=args.fov, val_fraction=args.val_fraction)
    write_dataset(clips, args.out, splits)
    print(f"wrote {len(clips)} clips to {args.out}")


def cmd_train_vae(args):
    from .train import train_vae
    cfg = _config(args, "vae")
    os.makedirs(cfg.out_dir, exist_ok=True)
    save_config(cfg, os.path.join(cfg.out_dir, "config.yaml"))
    res = train_vae(cfg, out_dir=cfg.out_dir)
    print(f"final loss {res.history[-1]['loss']:.6f}; checkpoint {res.path}")


def cmd_train_diffusion(args):
    from .train import train_diffusion
    cfg = _config(args, "diffusion")
    os.makedirs(cfg.out_dir, exist_ok=True)
    save_config(cfg, os.path.join(cfg.out_dir, "config.yaml"))
    res = train_diffusion(cfg, args.vae, out_dir=cfg.out_dir)
    print(f"final loss {res.history[-1]['loss']:.6f}; checkpoint {res.path}")


def cmd_generate(args):
    from .export import write_video
    from .generate import generate
    vae, _ = model_from_checkpoint(args.vae)
    dit, payload = model_from_checkpoint(args.checkpoint)
    clips = _clips(args.dataset, args.split, args.clip, args.n_clips)
    gen = generate(vae, dit, payload["extra"]["latent_scale"], clips, n_ref=args.refs, horizon=args.horizon,
                   steps=args.steps, seed=args.seed, guidance_scale=args.guidance)
    for clip, video in zip(clips, gen.videos):
        write_video(video, os.path.join(args.out, clip.clip_id))
    np.save(os.path.join(args.out, "latents.npy"), gen.latents.numpy())
    _write_json({"n_ref": args.refs, "steps": args.steps, "seed": args.seed, "windows": gen.n_windows,
                 "clips": [c.clip_id for c in clips], "config": payload.get("run_config")},
                os.path.join(args.out, "generation.json"))
    print(f"wrote {len(clips)} videos ({gen.n_windows} sampler windows each) to {args.out}")


def cmd_reconstruct(args):
    import torch

    from .export import write_video
    from .generate import reconstruct4d
    if args.window != 4:
        raise SystemExit("only 4-frame windows are supported")
    vae, _ = model_from_checkpoint(args.vae)
    for clip in _clips(args.dataset, args.split, args.clip, args.n_clips):
        with torch.no_grad():
            z = vae.encode(torch.as_tensor(clip.images)).mean
        out = os.path.join(args.out, clip.clip_id)
        rec = reconstruct4d(vae, z, clip.cameras, clip.timestamps, clip.view_mask, out_dir=out)
        write_video(rec.rgb, out, depth=rec.depth)
        print(f"{clip.clip_id}: windows at {rec.starts}")


def cmd_eval(args):
    from .evaluate import evaluate_vae, frechet_report
    from .generate import generate
    wanted = set(args.metrics.split(","))
    unknown = wanted - {"psnr", "drmse", "absrel", "delta1", "frechet"}
    if unknown:
        raise SystemExit(f"unknown metrics {sorted(unknown)}")
    vae, vpay = model_from_checkpoint(args.vae)
    clips = _clips(args.dataset, args.split, args.clip, args.n_clips)
    report = {"metrics": {}, "per_clip": {}, "meta": {"vae": args.vae, "split": args.split, "seed": args.seed,
                                                      "config": vpay.get("run_config")}}
    if wanted & {"psnr", "drmse", "absrel", "delta1"}:
        r = evaluate_vae(vae, clips)
        report["metrics"].update({k: v for k, v in r.metrics.items() if k in wanted})
        report["per_clip"] = r.per_clip
    if "frechet" in wanted:
        if not args.checkpoint:
            raise SystemExit("frechet needs --checkpoint (diffusion)")
        dit, payload = model_from_checkpoint(args.checkpoint)
        gen = generate(vae, dit, payload["extra"]["latent_scale"], clips, n_ref=args.refs, steps=args.steps,
                       seed=args.seed)
        report["metrics"].update(frechet_report([c.images for c in clips], list(gen.videos), vae).metrics)
    print(json.dumps(report["metrics"], indent=1))
    if args.out:
        _write_json(report, args.out)


def cmd_ablate(args):
    from .ablation import Arm, format_table, run_ablation
    clips = _clips(args.dataset, args.split, limit=args.n_clips)
    arms = []
    for name, vae_path, dit_path in args.arm:
        vae, _ = model_from_checkpoint(vae_path)
        dit, payload = model_from_checkpoint(dit_path)
        seed = (payload.get("run_config") or {}).get("seed", 0)
        arms.append(Arm(name, vae, dit, payload["extra"]["latent_scale"], payload["step"], seed))
    evaluator = model_from_checkpoint(args.evaluator)[0] if args.evaluator else arms[0].vae
    if args.name == "ref_frames":
        results = run_ablation("ref_frames", arms, clips, evaluator, args.steps)
        results = {f"n_ref={k}": v for k, v in results.items()}
    else:
        grouped = {}
        for a in arms:
            grouped.setdefault(a.name, []).append(a)
        results = run_ablation("storm_vae", grouped, clips, evaluator, args.steps)
    table = format_table(results)
    print(table)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"ablation_{args.name}.md"), "w") as f:
            f.write(table + "\n")
        _write_json({k: [r.to_dict() for r in v] for k, v in results.items()},
                    os.path.join(args.out, f"ablation_{args.name}.json"))


def cmd_render_debug(args):
    from .export import contact_sheet, save_png
    os.makedirs(args.out, exist_ok=True)
    for clip in _clips(args.dataset, args.split, args.clip, args.n_clips):
        frames = clip.images[:: max(1, clip.n_frames // 4)]
        save_png(contact_sheet(frames), os.path.join(args.out, f"{clip.clip_id}_rgb.png"))
        d = clip.depth[:: max(1, clip.n_frames // 4)]
        dn = np.where(np.isfinite(d), 1.0 - np.clip(d / 50.0, 0, 1), 0.0)
        save_png(contact_sheet(np.repeat(dn[..., None], 3, -1)), os.path.join(args.out, f"{clip.clip_id}_depth.png"))
        c = clip.conditions
        ras = np.concatenate([c.box_raster, c.lane_raster, np.zeros_like(c.lane_raster)], -1)
        save_png(contact_sheet(ras[:: max(1, clip.n_frames // 4)]), os.path.join(args.out, f"{clip.clip_id}_cond.png"))
        print(f"{clip.clip_id}: wrote debug sheets")


def build_parser():
    p = argparse.ArgumentParser(prog="splatworld", description="Synthetic multi-view world model toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic multi-camera dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n-clips", "--clips", dest="n_clips", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, nargs=2, default=(64, 64), metavar=("H", "W"))
    s.add_argument("--views", type=int, default=6)
    s.add_argument("--frames", type=int, default=19)
    s.add_argument("--fov", type=float, default=90.0)
    s.add_argument("--val-fraction", type=float, default=0.1)
    s.set_defaults(func=cmd_synth)

    for name, func in (("train-vae", cmd_train_vae), ("train-diffusion", cmd_train_diffusion)):
        t = sub.add_parser(name, help=f"run the {name[6:]} training stage")
        t.add_argument("--config")
        t.add_argument("--dataset")
        t.add_argument("--out")
        t.add_argument("--max-steps", type=int)
        t.add_argument("--seed", type=int)
        if name == "train-diffusion":
            t.add_argument("--vae", required=True, help="VAE checkpoint")
        t.set_defaults(func=func)

    def data_args(q):
        q.add_argument("--dataset", required=True)
        q.add_argument("--split", default="val")
        q.add_argument("--clip", action="append", help="restrict to these clip ids")
        q.add_argument("--n-clips", type=int)

    g = sub.add_parser("generate", help="sample videos from a diffusion checkpoint")
    data_args(g)
    g.add_argument("--vae", required=True)
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--refs", type=int, choices=(0, 1, 3), default=0)
    g.add_argument("--steps", type=int, default=50)
    g.add_argument("--horizon", type=int, help="total output frames")
    g.add_argument("--guidance", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("reconstruct", help="sliding-window 4D Gaussian reconstruction")
    data_args(r)
    r.add_argument("--vae", required=True)
    r.add_argument("--window", type=int, default=4)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reconstruct)

    e = sub.add_parser("eval", help="reconstruction metrics and Fréchet proxies")
    data_args(e)
    e.add_argument("--vae", required=True)
    e.add_argument("--checkpoint", help="diffusion checkpoint (for frechet)")
    e.add_argument("--metrics", default="psnr,drmse,absrel,delta1")
    e.add_argument("--refs", type=int, choices=(0, 1, 3), default=0)
    e.add_argument("--steps", type=int, default=50)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="report JSON path")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="reference-frame or latent-space ablation table")
    a.add_argument("--name", choices=("ref_frames", "storm_vae"), required=True)
    a.add_argument("--dataset", required=True)
    a.add_argument("--split", default="val")
    a.add_argument("--n-clips", type=int)
    a.add_argument("--arm", nargs=3, action="append", required=True, metavar=("NAME", "VAE", "DIFFUSION"))
    a.add_argument("--evaluator", help="VAE checkpoint whose encoder defines the feature space")
    a.add_argument("--steps", type=int, default=50)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    d = sub.add_parser("render-debug", help="contact sheets of dataset images, depth and condition rasters")
    data_args(d)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_render_debug)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (DatasetError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
