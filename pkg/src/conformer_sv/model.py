"""Full speaker-embedding model: front-end, block stack, aggregation, head."""

from __future__ import annotations

import numpy as np

from . import aggregator, encoder
from .autodiff import Tensor, no_grad
from .config import EncoderConfig


class SpeakerModel:
    """Owns the named parameter table and the end-to-end forward pass."""

    def __init__(self, cfg: EncoderConfig, params: dict):
        self.cfg = cfg
        self.params = params

    @classmethod
    def from_config(cls, cfg: EncoderConfig, seed: int = 0) -> "SpeakerModel":
        cfg.validate()
        rng = np.random.default_rng(seed)
        params = init_model_params(cfg, rng)
        return cls(cfg, params)

    def forward(self, x: Tensor, train: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        """(B, T, num_mels) features -> (B, embedding_dim) embeddings."""
        blocks = encoder.encode(x, self.params, self.cfg, train=train, rng=rng)
        return aggregator.aggregate(blocks, self.params, self.cfg, train=train)

    def embed(self, frames: np.ndarray) -> np.ndarray:
        """Eval-mode embedding for a single (T, F) feature matrix."""
        with no_grad():
            out = self.forward(Tensor(frames[None, :, :]), train=False)
        return out.data[0]

    def trainable_params(self) -> dict:
        return {k: v for k, v in self.params.items() if v.requires_grad}

    def param_count(self) -> int:
        """Trainable parameters in encoder plus aggregator head."""
        return sum(v.size for v in self.trainable_params().values())

    def zero_grads(self):
        for v in self.params.values():
            v.grad = None


def init_model_params(cfg: EncoderConfig, rng: np.random.Generator) -> dict:
    params = encoder.init_encoder_params(cfg, rng)
    params.update(aggregator.init_aggregator_params(cfg, rng))
    return params
