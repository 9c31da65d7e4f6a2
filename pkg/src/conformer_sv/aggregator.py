"""Multi-scale aggregation, attentive statistics pooling and embedding head."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import EncoderConfig
from .errors import ShapeMismatch
from .nn import batch_norm_1d, layer_norm, linear, uniform_init

STD_EPS = 1e-9


def init_aggregator_params(cfg: EncoderConfig, rng: np.random.Generator) -> dict:
    p = {}
    D = cfg.mfa_dim
    p["mfa.ln.g"] = Tensor(np.ones(D), requires_grad=True)
    p["mfa.ln.b"] = Tensor(np.zeros(D), requires_grad=True)
    p["pool.w"] = Tensor(uniform_init(rng, (D, D), D), requires_grad=True)
    p["pool.b"] = Tensor(np.zeros(D), requires_grad=True)
    p["pool.v"] = Tensor(uniform_init(rng, (D,), D), requires_grad=True)
    p["pool.k"] = Tensor(np.zeros(()), requires_grad=True)
    p["emb.w"] = Tensor(uniform_init(rng, (2 * D, cfg.embedding_dim), 2 * D),
                        requires_grad=True)
    p["emb.b"] = Tensor(np.zeros(cfg.embedding_dim), requires_grad=True)
    p["emb.bn.g"] = Tensor(np.ones(cfg.embedding_dim), requires_grad=True)
    p["emb.bn.b"] = Tensor(np.zeros(cfg.embedding_dim), requires_grad=True)
    p["emb.bn.rm"] = Tensor(np.zeros(cfg.embedding_dim))
    p["emb.bn.rv"] = Tensor(np.ones(cfg.embedding_dim))
    return p


def mfa_concat(blocks: list, p: dict, use_mfa=True) -> Tensor:
    """Concatenate per-block outputs on the feature axis, then LayerNorm.

    With use_mfa=False only the last block's output is used (D = d).
    """
    shapes = {b.shape for b in blocks}
    if len(shapes) != 1:
        raise ShapeMismatch(f"block outputs disagree: {sorted(shapes)}")
    H = ad.concat(blocks, axis=-1) if use_mfa else blocks[-1]
    return layer_norm(H, p["mfa.ln.g"], p["mfa.ln.b"])


def attentive_stats_pool(H: Tensor, w: Tensor, b: Tensor, v: Tensor, k: Tensor,
                         weighted_mean_in_std=True) -> Tensor:
    """Attention-weighted mean and standard deviation over frames.

    H: (B, T, D) -> (B, 2D). Scores e_t = v . tanh(W H_t + b) + k, softmax
    over t. The variance subtracts the weighted mean by default; the
    unweighted-mean literal variant is kept behind the flag (it can go
    negative, hence the clamp either way).
    """
    e = ad.matmul(ad.ttanh(linear(H, ad.transpose(w), b)), v) + k  # (B, T)
    alpha = ad.softmax(e, axis=-1)
    B, T, D = H.shape
    a3 = alpha.reshape(B, T, 1)
    mu_w = (a3 * H).sum(axis=1)  # (B, D)
    second = (a3 * H * H).sum(axis=1)
    mu_ref = mu_w if weighted_mean_in_std else H.mean(axis=1)
    var = second - mu_ref * mu_ref
    sigma = ad.tsqrt(ad.clamp_min(var, STD_EPS))
    return ad.concat([mu_w, sigma], axis=-1)


def embedding_head(pooled: Tensor, p: dict, train=False) -> Tensor:
    """(B, 2D) -> (B, embedding_dim) via linear + BatchNorm."""
    y = linear(pooled, p["emb.w"], p["emb.b"])
    return batch_norm_1d(y, p["emb.bn.g"], p["emb.bn.b"],
                         p["emb.bn.rm"], p["emb.bn.rv"], train)


def aggregate(blocks: list, p: dict, cfg: EncoderConfig, train=False) -> Tensor:
    H = mfa_concat(blocks, p, use_mfa=cfg.use_mfa)
    pooled = attentive_stats_pool(H, p["pool.w"], p["pool.b"], p["pool.v"],
                                  p["pool.k"], cfg.weighted_std_mean)
    return embedding_head(pooled, p, train=train)
