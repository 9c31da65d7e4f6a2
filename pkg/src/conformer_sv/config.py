"""Model / training configuration and the shared key=value text dialect."""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError


@dataclass
class EncoderConfig:
    d: int = 256
    num_heads: int = 4
    conv_kernel: int = 15
    ffn_hidden: int = 2048
    num_blocks: int = 6
    subsampling_rate: int = 2  # denominator: 1, 2, 4 or 8
    subsample_channels: int = 32
    dropout: float = 0.1
    num_mels: int = 80
    embedding_dim: int = 192
    use_relative_pe: bool = True
    use_macaron: bool = True
    use_conv_module: bool = True
    use_mfa: bool = True
    block_kind: str = "conformer"  # or "transformer"
    weighted_std_mean: bool = True  # weighted mean inside the pooled variance

    def validate(self):
        if self.d % self.num_heads:
            raise ConfigError(f"d={self.d} not divisible by num_heads={self.num_heads}")
        if self.conv_kernel % 2 == 0:
            raise ConfigError(f"conv_kernel={self.conv_kernel} must be odd")
        if self.subsampling_rate not in (1, 2, 4, 8):
            raise ConfigError(f"subsampling_rate={self.subsampling_rate} not in 1/2/4/8")
        if self.block_kind not in ("conformer", "transformer"):
            raise ConfigError(f"block_kind={self.block_kind!r}")
        return self

    @property
    def mfa_dim(self):
        return self.d * self.num_blocks if self.use_mfa else self.d


@dataclass
class TrainConfig:
    lr0: float = 0.001
    lr_halving_epochs: int = 4
    weight_decay: float = 1e-7
    warmup_steps: int = 2000
    batch_size: int = 32  # full-scale training uses 200
    crop_frames: int = 298  # 3 s at 10 ms shift
    epochs: int = 30
    margin: float = 0.2
    scale: float = 30.0
    seed: int = 0

    def validate(self):
        for name in ("lr0", "lr_halving_epochs", "warmup_steps", "batch_size",
                     "crop_frames", "epochs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.margin < 1.0:
            raise ConfigError(f"margin={self.margin} outside [0, 1)")
        if self.scale <= 0:
            raise ConfigError(f"scale={self.scale} must be positive")
        return self


# tiny preset used by gradient checks and fast tests
TINY_ENCODER = dict(d=8, num_heads=2, num_blocks=2, conv_kernel=3, ffn_hidden=16,
                    subsample_channels=4, dropout=0.0)
# desk-scale preset for the toy end-to-end run
DESK_ENCODER = dict(d=64, num_heads=2, num_blocks=2, conv_kernel=7, ffn_hidden=256,
                    subsample_channels=16, subsampling_rate=4, dropout=0.1)


def _parse_value(field_type, text, key):
    if field_type is bool:
        if text in ("true", "1", "yes"):
            return True
        if text in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    try:
        return field_type(text)
    except ValueError as e:
        raise ConfigError(f"{key}: {e}") from e


def parse_kv(text) -> dict:
    """Parse `key=value` lines; '#' starts a comment, blanks ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def format_kv(mapping) -> str:
    return "".join(f"{k}={v}\n" for k, v in mapping.items())


def config_to_kv(enc: EncoderConfig, train: TrainConfig | None = None) -> dict:
    kv = {}
    for f in fields(EncoderConfig):
        v = getattr(enc, f.name)
        kv[f"encoder.{f.name}"] = str(v).lower() if isinstance(v, bool) else str(v)
    if train is not None:
        for f in fields(TrainConfig):
            v = getattr(train, f.name)
            kv[f"train.{f.name}"] = str(v).lower() if isinstance(v, bool) else str(v)
    return kv


def config_from_kv(kv: dict) -> tuple[EncoderConfig, TrainConfig]:
    """Build configs from a key=value mapping; unknown keys are rejected."""
    enc_fields = {f.name: f.type for f in fields(EncoderConfig)}
    train_fields = {f.name: f.type for f in fields(TrainConfig)}
    enc_types = {"d": int, "num_heads": int, "conv_kernel": int, "ffn_hidden": int,
                 "num_blocks": int, "subsampling_rate": int, "subsample_channels": int,
                 "dropout": float, "num_mels": int, "embedding_dim": int,
                 "use_relative_pe": bool, "use_macaron": bool, "use_conv_module": bool,
                 "use_mfa": bool, "block_kind": str, "weighted_std_mean": bool}
    train_types = {"lr0": float, "lr_halving_epochs": int, "weight_decay": float,
                   "warmup_steps": int, "batch_size": int, "crop_frames": int,
                   "epochs": int, "margin": float, "scale": float, "seed": int}
    enc_kwargs, train_kwargs = {}, {}
    for key, value in kv.items():
        if key.startswith("encoder."):
            name = key[len("encoder."):]
            if name not in enc_fields:
                raise ConfigError(f"unknown config key {key!r}")
            enc_kwargs[name] = _parse_value(enc_types[name], value, key)
        elif key.startswith("train."):
            name = key[len("train."):]
            if name not in train_fields:
                raise ConfigError(f"unknown config key {key!r}")
            train_kwargs[name] = _parse_value(train_types[name], value, key)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return (EncoderConfig(**enc_kwargs).validate(),
            TrainConfig(**train_kwargs).validate())
