from .gaussians import (DecodeConfig, DecodeError, GaussianSet, PixelGaussianGrid, camera_rays,
                        decode_raw, quat_to_rotmat, save_gaussians_text, transport)
from .oracle import oracle_render
from .rasterize import DIAGNOSTICS, RenderOutput, apply_exposure, composite_sky, project, rasterize

__all__ = [
    "DIAGNOSTICS", "DecodeConfig", "DecodeError", "GaussianSet", "PixelGaussianGrid", "RenderOutput",
    "apply_exposure", "camera_rays", "composite_sky", "decode_raw", "oracle_render", "project",
    "quat_to_rotmat", "rasterize", "save_gaussians_text", "transport",
]
