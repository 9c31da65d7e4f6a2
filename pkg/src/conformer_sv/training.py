"""Additive-margin softmax training: loss, Adam, schedule, toy data, checkpoints."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig, config_from_kv, config_to_kv, format_kv, parse_kv
from .errors import LabelOutOfRange, ShapeMismatch, TruncatedFile, UnsupportedFormat
from .features import FbankMatrix, crop_random
from .model import SpeakerModel
from .nn import uniform_init


class AMSoftmaxHead:
    """Classifier over cosine logits with additive margin."""

    def __init__(self, num_classes, embedding_dim, margin=0.2, scale=30.0,
                 rng=None, weights=None):
        self.margin = margin
        self.scale = scale
        if weights is None:
            rng = rng or np.random.default_rng(0)
            weights = uniform_init(rng, (num_classes, embedding_dim), embedding_dim)
        self.weights = Tensor(weights, requires_grad=True)

    @property
    def num_classes(self):
        return self.weights.shape[0]

    def cosine_logits(self, embeddings: Tensor) -> Tensor:
        en = embeddings * ad.power((embeddings * embeddings).sum(-1, keepdims=True), -0.5)
        w = self.weights
        wn = w * ad.power((w * w).sum(-1, keepdims=True), -0.5)
        return ad.matmul(en, ad.transpose(wn))


def am_softmax_loss(embeddings: Tensor, labels, head: AMSoftmaxHead) -> Tensor:
    """Mean over the batch of -log softmax(s * (cos - m on target))."""
    labels = np.asarray(labels, dtype=np.int64)
    C = head.num_classes
    if labels.min() < 0 or labels.max() >= C:
        raise LabelOutOfRange(f"labels must lie in [0, {C})")
    if embeddings.shape[0] != labels.shape[0]:
        raise ShapeMismatch("batch size of embeddings and labels disagree")
    cos = head.cosine_logits(embeddings)
    onehot = np.zeros((labels.size, C))
    onehot[np.arange(labels.size), labels] = 1.0
    logits = head.scale * (cos - head.margin * Tensor(onehot))
    nll = ad.logsumexp(logits, axis=-1) - (logits * onehot).sum(axis=-1)
    return nll.mean()


def learning_rate(step: int, epoch: int, cfg: TrainConfig) -> float:
    """Linear warmup over the first warmup_steps, then 50% every N epochs."""
    warm = min(step / cfg.warmup_steps, 1.0)
    return cfg.lr0 * warm * 0.5 ** (epoch // cfg.lr_halving_epochs)


def adam_init(params: dict) -> dict:
    return {
        "m": {k: np.zeros_like(v.data) for k, v in params.items()},
        "v": {k: np.zeros_like(v.data) for k, v in params.items()},
        "t": 0,
    }


def adam_step(params: dict, state: dict, lr_t: float, weight_decay: float = 0.0,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update with bias correction and decoupled weight decay."""
    state["t"] += 1
    t = state["t"]
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {p.data.shape}")
        m = state["m"][name]
        v = state["v"][name]
        m[...] = beta1 * m + (1 - beta1) * g
        v[...] = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p.data -= lr_t * mhat / (np.sqrt(vhat) + eps)
        if weight_decay:
            p.data -= lr_t * weight_decay * p.data


# synthetic speakers ----------------------------------------------------------


@dataclass
class LabeledUtterance:
    frames: np.ndarray  # (T, num_mels)
    speaker: int


def _speaker_template(rng, num_mels):
    """Smooth random spectral profile plus formant-like bumps."""
    control = rng.normal(0.0, 2.0, size=8)
    base = np.interp(np.linspace(0, 7, num_mels), np.arange(8), control)
    bins = np.arange(num_mels)
    for _ in range(3):
        center = rng.uniform(0, num_mels)
        width = rng.uniform(2.0, 6.0)
        height = rng.uniform(1.0, 3.0)
        base = base + height * np.exp(-0.5 * ((bins - center) / width) ** 2)
    return base


def make_toy_dataset(num_speakers, utts_per_speaker, seed, num_frames=350,
                     num_mels=80, noise=0.1) -> list:
    """Deterministic synthetic speakers: template + temporal modulation + noise."""
    if num_speakers < 2:
        raise ValueError("need at least 2 speakers")
    rng = np.random.default_rng(seed)
    data = []
    t = np.arange(num_frames)
    for spk in range(num_speakers):
        template = _speaker_template(rng, num_mels)
        for _ in range(utts_per_speaker):
            profile = rng.normal(0.0, 1.0, size=num_mels)
            profile /= np.linalg.norm(profile)
            period = rng.uniform(20.0, 60.0)
            phase = rng.uniform(0.0, 2 * np.pi)
            mod = 0.3 * np.sin(2 * np.pi * t / period + phase)
            frames = template[None, :] + mod[:, None] * profile[None, :]
            if noise > 0:
                frames = frames + rng.normal(0.0, noise, size=frames.shape)
            data.append(LabeledUtterance(frames=frames, speaker=spk))
    return data


# training loop ---------------------------------------------------------------


def train(model: SpeakerModel, head: AMSoftmaxHead, data: list,
          cfg: TrainConfig, log=None) -> list:
    """Epoch loop with random crops; returns per-epoch metric dicts."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    trainables = dict(model.trainable_params())
    trainables["cls.w"] = head.weights
    state = adam_init(trainables)
    metrics = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        losses, correct, seen = [], 0, 0
        lr_t = learning_rate(max(step, 1), epoch, cfg)
        for start in range(0, len(order), cfg.batch_size):
            batch_idx = order[start:start + cfg.batch_size]
            if len(batch_idx) < 2:
                continue  # BatchNorm needs >= 2 items
            crops = [crop_random(FbankMatrix(frames=data[i].frames),
                                 cfg.crop_frames, rng).frames for i in batch_idx]
            x = Tensor(np.stack(crops))
            labels = np.array([data[i].speaker for i in batch_idx])
            emb = model.forward(x, train=True, rng=rng)
            loss = am_softmax_loss(emb, labels, head)
            model.zero_grads()
            head.weights.grad = None
            loss.backward()
            step += 1
            lr_t = learning_rate(step, epoch, cfg)
            adam_step(trainables, state, lr_t, cfg.weight_decay)
            losses.append(float(loss.data))
            with ad.no_grad():
                pred = head.cosine_logits(emb).data.argmax(axis=1)
            correct += int((pred == labels).sum())
            seen += len(batch_idx)
        entry = {"epoch": epoch, "loss": float(np.mean(losses)),
                 "acc": correct / max(seen, 1), "lr": lr_t, "steps": step}
        metrics.append(entry)
        if log is not None:
            log(f"epoch={entry['epoch']} loss={entry['loss']:.6f} "
                f"acc={entry['acc']:.4f} lr={entry['lr']:.6g}")
    return metrics


# checkpoint format: magic "MFAC", u32 version=1, u32 config-blob length +
# UTF-8 key=value text, u32 tensor count, per tensor: u16 name length + name,
# u8 rank, u32 dims[], little-endian float32 row-major.

_MAGIC = b"MFAC"
_VERSION = 1


def save_checkpoint(path, model: SpeakerModel, train_cfg: TrainConfig | None = None,
                    head: AMSoftmaxHead | None = None):
    kv = config_to_kv(model.cfg, train_cfg)
    if head is not None:
        kv["train.num_speakers"] = str(head.num_classes)
    blob = format_kv(kv).encode("utf-8")
    tensors = dict(model.params)
    if head is not None:
        tensors["cls.w"] = head.weights
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(tensors)))
        for name, t in tensors.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)) + encoded)
            shape = t.data.shape
            f.write(struct.pack("<B", len(shape)))
            f.write(struct.pack(f"<{len(shape)}I", *shape))
            f.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (model, train_cfg, head_or_None). Unknown tensor names rejected."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != _MAGIC:
        raise UnsupportedFormat(f"{path}: not a checkpoint file")
    version, blob_len = struct.unpack("<II", raw[4:12])
    if version != _VERSION:
        raise UnsupportedFormat(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    if len(raw) < pos + blob_len + 4:
        raise TruncatedFile(f"{path}: truncated config blob")
    kv = parse_kv(raw[pos:pos + blob_len].decode("utf-8"))
    pos += blob_len
    num_speakers = int(kv.pop("train.num_speakers", 0))
    enc_cfg, train_cfg = config_from_kv(kv)
    model = SpeakerModel.from_config(enc_cfg, seed=0)
    expected = set(model.params)
    (count,) = struct.unpack("<I", raw[pos:pos + 4])
    pos += 4
    head_weights = None
    for _ in range(count):
        (name_len,) = struct.unpack("<H", raw[pos:pos + 2])
        pos += 2
        name = raw[pos:pos + name_len].decode("utf-8")
        pos += name_len
        rank = raw[pos]
        pos += 1
        shape = struct.unpack(f"<{rank}I", raw[pos:pos + 4 * rank])
        pos += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        end = pos + 4 * n
        if end > len(raw):
            raise TruncatedFile(f"{path}: truncated tensor {name}")
        data = np.frombuffer(raw[pos:end], dtype="<f4").reshape(shape).astype(np.float64)
        pos = end
        if name == "cls.w":
            head_weights = data
            continue
        if name not in expected:
            raise UnsupportedFormat(f"{path}: unknown tensor name {name!r}")
        if model.params[name].data.shape != data.shape:
            raise ShapeMismatch(f"{name}: shape {data.shape} vs "
                                f"{model.params[name].data.shape}")
        model.params[name].data = data
    head = None
    if head_weights is not None:
        head = AMSoftmaxHead(num_speakers or head_weights.shape[0],
                             head_weights.shape[1], margin=train_cfg.margin,
                             scale=train_cfg.scale, weights=head_weights)
    return model, train_cfg, head
