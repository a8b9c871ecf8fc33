from .ablation import (Arm, ComparisonError, ablate_ref_frames, ablate_storm_vae, beats_by_margin, check_equal_steps,
                       format_table, run_ablation)
from .checkpoint import CheckpointError, checkpoint_payload, load_checkpoint, model_from_checkpoint, save_checkpoint
from .config import RunConfig, load_config, save_config, seed_everything, strict_mode
from .evaluate import evaluate_vae, frechet_report, render_context
from .generate import Generation, generate, horizon_windows, reconstruct4d, window_starts
from .metrics import MetricsReport, absrel, delta1, drmse, frechet_distance, frechet_latent, latent_features, psnr
from .train import TrainingError, cosine_lr, prepare_latents, train_diffusion, train_vae

__all__ = [
    "Arm", "CheckpointError", "ComparisonError", "Generation", "MetricsReport", "RunConfig", "TrainingError",
    "ablate_ref_frames", "ablate_storm_vae", "absrel", "beats_by_margin", "check_equal_steps",
    "checkpoint_payload", "cosine_lr", "delta1", "drmse", "evaluate_vae", "format_table", "frechet_distance",
    "frechet_latent", "frechet_report", "generate", "horizon_windows", "latent_features", "load_checkpoint",
    "load_config", "model_from_checkpoint", "prepare_latents", "psnr", "reconstruct4d", "render_context",
    "run_ablation", "save_checkpoint", "save_config", "seed_everything", "strict_mode", "train_diffusion",
    "train_vae", "window_starts",
]
