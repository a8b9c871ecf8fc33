"""Checkpoint container: parameters, config echo, step, optional extras."""
from __future__ import annotations

import io
import pickle
from dataclasses import asdict

import torch

from ..cvdiffusion import DiffusionConfig, VideoDiT
from ..gsvae import DualDecoderVAE, VAEConfig
from .config import build_dataclass


class CheckpointError(RuntimeError):
    pass


def _tuples_to_lists(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def checkpoint_payload(kind, model, step, run_config=None, extra=None, optimizer=None):
    payload = {
        "kind": kind,
        "step": int(step),
        "model_config": _tuples_to_lists(asdict(model.config)),
        "run_config": run_config.to_dict() if run_config is not None else None,
        "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "extra": extra or {},
    }
    if optimizer is not None:
        payload["optimizer"] = optimizer.state_dict()
    return payload


def save_checkpoint(payload, path):
    buf = io.BytesIO()
    torch.save(payload, buf)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path):
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    for key in ("kind", "step", "model_config", "state_dict"):
        if key not in payload:
            raise CheckpointError(f"checkpoint {path} lacks {key!r}")
    return payload


def model_from_checkpoint(payload):
    if isinstance(payload, (str, bytes)) or hasattr(payload, "__fspath__"):
        payload = load_checkpoint(payload)
    kind = payload["kind"]
    if kind == "vae":
        model = DualDecoderVAE(build_dataclass(VAEConfig, payload["model_config"]))
    elif kind == "diffusion":
        model = VideoDiT(build_dataclass(DiffusionConfig, payload["model_config"]))
    else:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload
