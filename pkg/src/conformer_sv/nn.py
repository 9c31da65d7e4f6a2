"""Composite neural layers built on the autodiff kernel."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DegenerateBatch, ShapeMismatch


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b) over the last axis; w is (in, out)."""
    y = ad.matmul(x, w)
    return y if b is None else y + b


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean/unit-variance over the last axis, then affine."""
    if gamma.shape[-1] != x.shape[-1]:
        raise ShapeMismatch(f"layer_norm: x {x.shape} vs gamma {gamma.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return gamma * (xc / ad.tsqrt(var + eps)) + beta


def batch_norm_1d(x: Tensor, gamma: Tensor, beta: Tensor,
                  running_mean: Tensor, running_var: Tensor,
                  train: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """BatchNorm over channel axis 1 of (B, d) or (B, d, T) input.

    Train mode normalizes by batch statistics and updates the running
    buffers in place; eval mode uses the running buffers.
    """
    if x.ndim == 2:
        axes, view = (0,), (1, -1)
    elif x.ndim == 3:
        axes, view = (0, 2), (1, -1, 1)
    else:
        raise ShapeMismatch(f"batch_norm_1d: rank {x.ndim}")
    if train:
        n = int(np.prod([x.shape[a] for a in axes]))
        if n < 2:
            raise DegenerateBatch("batch norm needs >= 2 elements per channel")
        mu = x.mean(axis=axes, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        running_mean.data[:] = (1 - momentum) * running_mean.data \
            + momentum * mu.data.reshape(-1)
        running_var.data[:] = (1 - momentum) * running_var.data \
            + momentum * var.data.reshape(-1) * n / (n - 1)
        xhat = xc / ad.tsqrt(var + eps)
    else:
        mu = running_mean.data.reshape(view)
        sd = np.sqrt(running_var.data.reshape(view) + eps)
        xhat = (x - mu) * (1.0 / sd)
    return gamma.reshape(view) * xhat + beta.reshape(view)


def sinusoid_encoding(positions, dim) -> np.ndarray:
    """Sinusoidal encoding with the standard 10000-exponent geometry.

    positions: 1-D array of (possibly negative) positions; returns (len, dim).
    """
    positions = np.asarray(positions, dtype=np.float64)
    half = dim // 2
    inv_freq = 1.0 / (10000.0 ** (np.arange(half) * 2.0 / dim))
    angles = positions[:, None] * inv_freq[None, :]
    pe = np.zeros((positions.size, dim))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : dim - half])
    return pe


def uniform_init(rng: np.random.Generator, shape, fan_in) -> np.ndarray:
    """Uniform in +-1/sqrt(fan_in)."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
