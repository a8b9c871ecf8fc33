from .autoencoder import ImageAutoencoder, PosteriorStats, reparameterize
from .gsdecoder import GaussianDecoder, GsDecoderOutput, gaussians_from_output, gs_decode, render_targets
from .losses import gradient_perceptual, kl_divergence, loss_storm, loss_vae, total_loss
from .model import DualDecoderVAE, LatentGrid, VAEConfig, clip_losses, select_context

__all__ = [
    "DualDecoderVAE", "GaussianDecoder", "GsDecoderOutput", "ImageAutoencoder", "LatentGrid",
    "PosteriorStats", "VAEConfig", "clip_losses", "gaussians_from_output", "gradient_perceptual",
    "gs_decode", "kl_divergence", "loss_storm", "loss_vae", "render_targets", "reparameterize",
    "select_context", "total_loss",
]
