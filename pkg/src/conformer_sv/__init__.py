"""Speaker-embedding pipeline: log-mel features, a Conformer encoder with
multi-scale aggregation and attentive statistics pooling, margin-softmax
training, and the cosine / s-norm / EER / minDCF / RTF evaluation protocol."""

from .autodiff import Tensor, no_grad
from .config import EncoderConfig, TrainConfig
from .model import SpeakerModel

__all__ = ["Tensor", "no_grad", "EncoderConfig", "TrainConfig", "SpeakerModel"]
__version__ = "0.1.0"
