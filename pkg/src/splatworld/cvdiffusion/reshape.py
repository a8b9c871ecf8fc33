"""Token layouts for factorised video attention.

Tokens live as (B, T, V, N, D): batch, frame, view, per-image token, width.
Each layout puts one axis on the attention sequence and folds the rest into
the batch, with the sample index outermost.
"""
from __future__ import annotations

import torch


def to_spatial(x):
    """(B, T, V, N, D) -> (B*T*V, N, D)."""
    B, T, V, N, D = x.shape
    return x.reshape(B * T * V, N, D)


def from_spatial(s, shape):
    return s.reshape(shape)


def to_temporal(x):
    """(B, T, V, N, D) -> (B*V*N, T, D); sequence index v*N + n within a sample."""
    B, T, V, N, D = x.shape
    return x.permute(0, 2, 3, 1, 4).reshape(B * V * N, T, D)


def from_temporal(s, shape):
    B, T, V, N, D = shape
    return s.reshape(B, V, N, T, D).permute(0, 3, 1, 2, 4).contiguous()


def to_crossview(x):
    """(B, T, V, N, D) -> (B*T*N, V, D); sequence index t*N + n within a sample."""
    B, T, V, N, D = x.shape
    return x.permute(0, 1, 3, 2, 4).reshape(B * T * N, V, D)


def from_crossview(s, shape):
    B, T, V, N, D = shape
    return s.reshape(B, T, N, V, D).permute(0, 1, 3, 2, 4).contiguous()


def _grid_tokens(z):
    # (T, V, C, h, w) -> (1, T, V, h*w, C)
    T, V, C, h, w = z.shape
    return z.permute(0, 1, 3, 4, 2).reshape(1, T, V, h * w, C)


def _tokens_grid(x, h, w):
    _, T, V, N, C = x.shape
    return x.reshape(T, V, h, w, C).permute(0, 1, 4, 2, 3).contiguous()


def reshape_spatial(z):
    """Latent grid (T, V, C, h, w) -> T*V sequences of h*w tokens of width C.

    Element (t, v, c, y, x) sits at sequence t*V + v, token y*w + x.
    """
    return to_spatial(_grid_tokens(z))


def inverse_spatial(s, grid_shape):
    T, V, C, h, w = grid_shape
    return _tokens_grid(from_spatial(s, (1, T, V, h * w, C)), h, w)


def reshape_temporal(z):
    """Latent grid -> V*h*w sequences of T tokens; (t, v, c, y, x) sits at sequence v*h*w + y*w + x, token t."""
    return to_temporal(_grid_tokens(z))


def inverse_temporal(s, grid_shape):
    T, V, C, h, w = grid_shape
    return _tokens_grid(from_temporal(s, (1, T, V, h * w, C)), h, w)


def reshape_crossview(z):
    """Latent grid -> T*h*w sequences of V tokens; (t, v, c, y, x) sits at sequence t*h*w + y*w + x, token v."""
    return to_crossview(_grid_tokens(z))


def inverse_crossview(s, grid_shape):
    T, V, C, h, w = grid_shape
    return _tokens_grid(from_crossview(s, (1, T, V, h * w, C)), h, w)
