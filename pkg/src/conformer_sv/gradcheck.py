"""Finite-difference audit of the full forward/backward path.

Runs the complete model plus margin-softmax loss at a tiny configuration and
compares analytic gradients against central finite differences at 64-bit,
sampling a few entries per parameter tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .config import TINY_ENCODER, EncoderConfig
from .model import SpeakerModel
from .training import AMSoftmaxHead, am_softmax_loss

REL_TOL = 1e-4
ABS_TOL = 1e-6


@dataclass
class GradCheckResult:
    name: str
    rel_err: float
    passed: bool


def _loss_fn(model, head, x_data, labels):
    emb = model.forward(Tensor(x_data), train=True, rng=np.random.default_rng(0))
    return am_softmax_loss(emb, labels, head)


def check_parameters(model, head, x_data, labels, samples_per_tensor=4,
                     seed=0, fd_step=1e-5, corrupt=None) -> list:
    """Central finite differences on sampled entries of every parameter tensor."""
    rng = np.random.default_rng(seed)
    params = dict(model.trainable_params())
    params["cls.w"] = head.weights
    loss = _loss_fn(model, head, x_data, labels)
    for p in params.values():
        p.grad = None
    loss.backward()
    results = []
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        if corrupt == name:
            analytic = analytic + 1.0
        flat = p.data.reshape(-1)
        n = flat.size
        picks = rng.choice(n, size=min(samples_per_tensor, n), replace=False)
        worst = 0.0
        ok = True
        for i in picks:
            orig = flat[i]
            h = fd_step * max(1.0, abs(orig))
            flat[i] = orig + h
            up = float(_loss_fn(model, head, x_data, labels).data)
            flat[i] = orig - h
            down = float(_loss_fn(model, head, x_data, labels).data)
            flat[i] = orig
            fd = (up - down) / (2 * h)
            an = analytic.reshape(-1)[i]
            err = abs(fd - an)
            worst = max(worst, err / max(abs(fd), ABS_TOL / REL_TOL))
            if err > max(ABS_TOL, REL_TOL * abs(fd)):
                ok = False
        results.append(GradCheckResult(name=name, rel_err=worst, passed=ok))
    return results


def run_gradcheck(preset="tiny", seed=0, corrupt=None, num_frames=10,
                  num_classes=3, batch=3) -> list:
    if preset != "tiny":
        raise ValueError(f"unknown gradcheck preset {preset!r}")
    cfg = EncoderConfig(**TINY_ENCODER).validate()
    rng = np.random.default_rng(seed)
    model = SpeakerModel.from_config(cfg, seed=seed)
    head = AMSoftmaxHead(num_classes, cfg.embedding_dim, rng=rng)
    x = rng.normal(size=(batch, num_frames, cfg.num_mels))
    labels = rng.integers(0, num_classes, size=batch)
    return check_parameters(model, head, x, labels, seed=seed, corrupt=corrupt)
