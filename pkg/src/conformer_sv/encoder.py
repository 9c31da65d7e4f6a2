"""Convolutional subsampling front-end and the Conformer block stack.

Block arithmetic: half-residual feed-forward pair sandwiching self-attention
(Transformer-XL style relative positions) and the convolution module, with a
final LayerNorm. Ablation switches cover the no-relative-PE, no-Macaron,
no-conv and plain-Transformer variants.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import EncoderConfig
from .nn import batch_norm_1d, layer_norm, linear, sinusoid_encoding, uniform_init


def _param(params, name, data, trainable=True):
    params[name] = Tensor(data, requires_grad=trainable)


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator) -> dict:
    """Named parameter table for the front-end plus all blocks."""
    p = {}
    d = cfg.d
    # subsampling front-end
    stages = int(math.log2(cfg.subsampling_rate))
    freq = cfg.num_mels
    ch_in = 1
    for s in range(stages):
        ch_out = cfg.subsample_channels
        _param(p, f"front.conv{s}.w",
               uniform_init(rng, (ch_out, ch_in, 3, 3), ch_in * 9))
        _param(p, f"front.conv{s}.b", np.zeros(ch_out))
        freq = -(-freq // 2)
        ch_in = ch_out
    proj_in = cfg.num_mels if stages == 0 else cfg.subsample_channels * freq
    _param(p, "front.proj.w", uniform_init(rng, (proj_in, d), proj_in))
    _param(p, "front.proj.b", np.zeros(d))
    for i in range(cfg.num_blocks):
        _init_block(p, f"block{i}.", cfg, rng)
    return p


def _init_ffn(p, prefix, cfg, rng):
    d, h = cfg.d, cfg.ffn_hidden
    _param(p, prefix + "ln.g", np.ones(d))
    _param(p, prefix + "ln.b", np.zeros(d))
    _param(p, prefix + "w1", uniform_init(rng, (d, h), d))
    _param(p, prefix + "b1", np.zeros(h))
    _param(p, prefix + "w2", uniform_init(rng, (h, d), h))
    _param(p, prefix + "b2", np.zeros(d))


def _init_attn(p, prefix, cfg, rng):
    d = cfg.d
    _param(p, prefix + "ln.g", np.ones(d))
    _param(p, prefix + "ln.b", np.zeros(d))
    for name in ("wq", "wk", "wv", "wo"):
        _param(p, prefix + name, uniform_init(rng, (d, d), d))
        _param(p, prefix + "b" + name[1], np.zeros(d))
    if cfg.use_relative_pe and cfg.block_kind == "conformer":
        _param(p, prefix + "wr", uniform_init(rng, (d, d), d))
        _param(p, prefix + "u", np.zeros(d))
        _param(p, prefix + "v", np.zeros(d))


def _init_block(p, prefix, cfg, rng):
    d = cfg.d
    if cfg.block_kind == "transformer":
        _init_attn(p, prefix + "attn.", cfg, rng)
        _param(p, prefix + "ln1.g", np.ones(d))
        _param(p, prefix + "ln1.b", np.zeros(d))
        _param(p, prefix + "ffn.w1", uniform_init(rng, (d, cfg.ffn_hidden), d))
        _param(p, prefix + "ffn.b1", np.zeros(cfg.ffn_hidden))
        _param(p, prefix + "ffn.w2", uniform_init(rng, (cfg.ffn_hidden, d), cfg.ffn_hidden))
        _param(p, prefix + "ffn.b2", np.zeros(d))
        _param(p, prefix + "ln2.g", np.ones(d))
        _param(p, prefix + "ln2.b", np.zeros(d))
        return
    if cfg.use_macaron:
        _init_ffn(p, prefix + "ffn1.", cfg, rng)
    _init_attn(p, prefix + "attn.", cfg, rng)
    if cfg.use_conv_module:
        k = cfg.conv_kernel
        _param(p, prefix + "conv.ln.g", np.ones(d))
        _param(p, prefix + "conv.ln.b", np.zeros(d))
        _param(p, prefix + "conv.pw1.w", uniform_init(rng, (2 * d, d, 1), d))
        _param(p, prefix + "conv.pw1.b", np.zeros(2 * d))
        _param(p, prefix + "conv.dw.w", uniform_init(rng, (d, 1, k), k))
        _param(p, prefix + "conv.dw.b", np.zeros(d))
        _param(p, prefix + "conv.bn.g", np.ones(d))
        _param(p, prefix + "conv.bn.b", np.zeros(d))
        _param(p, prefix + "conv.bn.rm", np.zeros(d), trainable=False)
        _param(p, prefix + "conv.bn.rv", np.ones(d), trainable=False)
        _param(p, prefix + "conv.pw2.w", uniform_init(rng, (d, d, 1), d))
        _param(p, prefix + "conv.pw2.b", np.zeros(d))
    _init_ffn(p, prefix + "ffn2.", cfg, rng)
    _param(p, prefix + "final_ln.g", np.ones(d))
    _param(p, prefix + "final_ln.b", np.zeros(d))


# forward -------------------------------------------------------------------


def subsample(x: Tensor, p: dict, cfg: EncoderConfig) -> Tensor:
    """(B, T, num_mels) -> (B, T', d) with T' = ceil(T / rate) per stage."""
    stages = int(math.log2(cfg.subsampling_rate))
    if stages == 0:
        return linear(x, p["front.proj.w"], p["front.proj.b"])
    B, T, F = x.shape
    y = x.reshape(B, 1, T, F)
    for s in range(stages):
        y = ad.conv2d(y, p[f"front.conv{s}.w"], p[f"front.conv{s}.b"],
                      stride=2, padding=1)
        y = ad.relu(y)
    _, C, Tp, Fp = y.shape
    y = ad.transpose(y, (0, 2, 1, 3)).reshape(B, Tp, C * Fp)
    return linear(y, p["front.proj.w"], p["front.proj.b"])


def feed_forward(x, p, prefix, cfg, train, rng):
    y = layer_norm(x, p[prefix + "ln.g"], p[prefix + "ln.b"])
    y = ad.swish(linear(y, p[prefix + "w1"], p[prefix + "b1"]))
    y = ad.dropout(y, cfg.dropout, rng, train)
    y = linear(y, p[prefix + "w2"], p[prefix + "b2"])
    return ad.dropout(y, cfg.dropout, rng, train)


def rel_shift(x: Tensor) -> Tensor:
    """(B, h, T, 2T-1) relative-offset logits -> (B, h, T, T) aligned so that
    out[t, tau] takes the column for offset t - tau."""
    B, h, T, L = x.shape
    y = ad.pad(x, ((0, 0), (0, 0), (0, 0), (1, 0)))  # (B, h, T, 2T)
    y = y.reshape(B, h, 2 * T, T)
    y = y[:, :, 1:, :]
    y = y.reshape(B, h, T, L)
    return y[:, :, :, :T]


def relative_logits(qv: Tensor, r: Tensor) -> Tensor:
    """Position term: qv (B, h, T, dh) against r (h, 2T-1, dh) -> (B, h, T, T)."""
    bd = ad.matmul(qv, ad.transpose(r, (0, 2, 1)))
    return rel_shift(bd)


def _split_heads(t: Tensor, num_heads):
    B, T, d = t.shape
    return ad.swapaxes(t.reshape(B, T, num_heads, d // num_heads), 1, 2)


def mhsa(x: Tensor, p: dict, prefix: str, cfg: EncoderConfig, train, rng,
         pre_norm=True) -> Tensor:
    """Multi-head self-attention; relative positions when configured."""
    B, T, d = x.shape
    h = cfg.num_heads
    dh = d // h
    y = layer_norm(x, p[prefix + "ln.g"], p[prefix + "ln.b"]) if pre_norm else x
    q = _split_heads(linear(y, p[prefix + "wq"], p[prefix + "bq"]), h)
    k = _split_heads(linear(y, p[prefix + "wk"], p[prefix + "bk"]), h)
    v = _split_heads(linear(y, p[prefix + "wv"], p[prefix + "bv"]), h)
    kt = ad.swapaxes(k, -1, -2)
    use_rel = cfg.use_relative_pe and (prefix + "wr") in p
    if use_rel:
        u = p[prefix + "u"].reshape(h, 1, dh)
        vb = p[prefix + "v"].reshape(h, 1, dh)
        content = ad.matmul(q + u, kt)
        offsets = np.arange(T - 1, -T, -1)  # column j holds offset T-1-j
        pe = Tensor(sinusoid_encoding(offsets, d))
        r = ad.matmul(pe, p[prefix + "wr"]).reshape(2 * T - 1, h, dh)
        r = ad.transpose(r, (1, 0, 2))
        logits = (content + relative_logits(q + vb, r)) * (1.0 / math.sqrt(dh))
    else:
        logits = ad.matmul(q, kt) * (1.0 / math.sqrt(dh))
    attn = ad.softmax(logits, axis=-1)
    out = ad.matmul(attn, v)
    out = ad.swapaxes(out, 1, 2).reshape(B, T, d)
    out = linear(out, p[prefix + "wo"], p[prefix + "bo"])
    return ad.dropout(out, cfg.dropout, rng, train)


def conv_module(x: Tensor, p: dict, prefix: str, cfg: EncoderConfig, train, rng):
    """Pointwise/GLU -> depthwise -> BatchNorm -> swish -> pointwise."""
    d = cfg.d
    y = layer_norm(x, p[prefix + "ln.g"], p[prefix + "ln.b"])
    y = ad.swapaxes(y, 1, 2)  # (B, d, T)
    y = ad.conv1d(y, p[prefix + "pw1.w"], p[prefix + "pw1.b"])
    y = ad.glu(y, axis=1)
    y = ad.conv1d(y, p[prefix + "dw.w"], p[prefix + "dw.b"],
                  padding=(cfg.conv_kernel - 1) // 2, groups=d)
    y = batch_norm_1d(y, p[prefix + "bn.g"], p[prefix + "bn.b"],
                      p[prefix + "bn.rm"], p[prefix + "bn.rv"], train)
    y = ad.swish(y)
    y = ad.conv1d(y, p[prefix + "pw2.w"], p[prefix + "pw2.b"])
    y = ad.swapaxes(y, 1, 2)
    return ad.dropout(y, cfg.dropout, rng, train)


def conformer_block(x: Tensor, p: dict, prefix: str, cfg: EncoderConfig,
                    train=False, rng=None) -> Tensor:
    if cfg.use_macaron:
        x = x + 0.5 * feed_forward(x, p, prefix + "ffn1.", cfg, train, rng)
    x = x + mhsa(x, p, prefix + "attn.", cfg, train, rng)
    if cfg.use_conv_module:
        x = x + conv_module(x, p, prefix + "conv.", cfg, train, rng)
    ffn_scale = 0.5 if cfg.use_macaron else 1.0
    x = x + ffn_scale * feed_forward(x, p, prefix + "ffn2.", cfg, train, rng)
    return layer_norm(x, p[prefix + "final_ln.g"], p[prefix + "final_ln.b"])


def transformer_block(x: Tensor, p: dict, prefix: str, cfg: EncoderConfig,
                      train=False, rng=None) -> Tensor:
    """Standard post-norm Transformer layer."""
    x = x + mhsa(x, p, prefix + "attn.", cfg, train, rng, pre_norm=False)
    x = layer_norm(x, p[prefix + "ln1.g"], p[prefix + "ln1.b"])
    y = ad.relu(linear(x, p[prefix + "ffn.w1"], p[prefix + "ffn.b1"]))
    y = ad.dropout(y, cfg.dropout, rng, train)
    y = linear(y, p[prefix + "ffn.w2"], p[prefix + "ffn.b2"])
    x = x + ad.dropout(y, cfg.dropout, rng, train)
    return layer_norm(x, p[prefix + "ln2.g"], p[prefix + "ln2.b"])


def encode(x: Tensor, p: dict, cfg: EncoderConfig, train=False, rng=None) -> list:
    """Subsample then run all blocks; returns every block's output."""
    y = subsample(x, p, cfg)
    absolute_pe = cfg.block_kind == "transformer" or not cfg.use_relative_pe
    if absolute_pe:
        T = y.shape[1]
        y = y + Tensor(sinusoid_encoding(np.arange(T), cfg.d))
    block = transformer_block if cfg.block_kind == "transformer" else conformer_block
    outputs = []
    for i in range(cfg.num_blocks):
        y = block(y, p, f"block{i}.", cfg, train, rng)
        outputs.append(y)
    return outputs


def subsampled_length(T: int, rate: int) -> int:
    for _ in range(int(math.log2(rate))):
        T = -(-T // 2)
    return T
