"""WAV ingestion and 80-dim log-Mel filterbank extraction.

Front-end recipe: pre-emphasis 0.97, 25 ms Hamming window, 10 ms shift,
512-point DFT, 80 triangular mel filters on 20-7600 Hz, natural log with
a 1e-10 floor, then per-utterance mean normalization over time.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import TooShort, TruncatedFile, UnsupportedFormat


@dataclass
class AudioBuffer:
    samples: np.ndarray  # mono, float64 in [-1, 1]
    sample_rate: int


@dataclass
class FbankConfig:
    num_mels: int = 80
    frame_length: float = 0.025
    frame_shift: float = 0.010
    preemphasis: float = 0.97
    n_fft: int = 512
    fmin: float = 20.0
    fmax: float = 7600.0
    log_floor: float = 1e-10
    mean_norm: bool = True


@dataclass
class FbankMatrix:
    frames: np.ndarray  # (T, F)
    frame_shift: float = 0.010
    frame_length: float = 0.025


def load_wav(path) -> AudioBuffer:
    """Load a mono 16-bit PCM RIFF/WAVE file. Samples scaled by 1/32768."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise UnsupportedFormat(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        chunk_id = raw[pos:pos + 4]
        (chunk_size,) = struct.unpack("<I", raw[pos + 4:pos + 8])
        body = raw[pos + 8:pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise TruncatedFile(f"{path}: fmt chunk too small")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif chunk_id == b"data":
            if len(body) < chunk_size:
                raise TruncatedFile(
                    f"{path}: data chunk declares {chunk_size} bytes, "
                    f"{len(body)} present"
                )
            data = body
        pos += 8 + chunk_size + (chunk_size & 1)
    if fmt is None or data is None:
        raise UnsupportedFormat(f"{path}: missing fmt/data chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if audio_format != 1:
        raise UnsupportedFormat(f"{path}: not PCM (format tag {audio_format})")
    if channels != 1:
        raise UnsupportedFormat(f"{path}: {channels} channels, expected mono")
    if bits != 16:
        raise UnsupportedFormat(f"{path}: {bits}-bit, expected 16-bit")
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    return AudioBuffer(samples=samples, sample_rate=rate)


def save_wav(path, audio: AudioBuffer):
    """Write a mono 16-bit PCM WAV (test/demo helper)."""
    pcm = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    data = pcm.tobytes()
    with open(path, "wb") as f:
        f.write(b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE")
        f.write(b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, audio.sample_rate,
                                      audio.sample_rate * 2, 2, 16))
        f.write(b"data" + struct.pack("<I", len(data)) + data)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(num_mels, n_fft, sample_rate, fmin, fmax):
    """Triangular mel filters, shape (num_mels, n_fft//2 + 1)."""
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), num_mels + 2))
    bin_hz = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    filters = np.zeros((num_mels, n_fft // 2 + 1))
    for m in range(num_mels):
        lo, center, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        filters[m] = np.maximum(0.0, np.minimum(rising, falling))
    return filters


def compute_fbank(audio: AudioBuffer, config: FbankConfig | None = None) -> FbankMatrix:
    """Log-mel filterbank matrix; T = 1 + floor((N - W) / H)."""
    cfg = config or FbankConfig()
    win = int(round(cfg.frame_length * audio.sample_rate))
    hop = int(round(cfg.frame_shift * audio.sample_rate))
    x = np.asarray(audio.samples, dtype=np.float64)
    if x.size < win:
        raise TooShort(f"{x.size} samples < one window of {win}")
    num_frames = 1 + (x.size - win) // hop
    idx = np.arange(num_frames)[:, None] * hop + np.arange(win)[None, :]
    frames = x[idx]
    # per-frame pre-emphasis, first sample against itself
    pre = frames - cfg.preemphasis * np.concatenate(
        [frames[:, :1], frames[:, :-1]], axis=1
    )
    window = np.hamming(win)
    spec = np.fft.rfft(pre * window, n=cfg.n_fft, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    filters = mel_filterbank(cfg.num_mels, cfg.n_fft, audio.sample_rate,
                             cfg.fmin, cfg.fmax)
    logmel = np.log(power @ filters.T + cfg.log_floor)
    if cfg.mean_norm:
        logmel = logmel - logmel.mean(axis=0, keepdims=True)
    return FbankMatrix(frames=logmel, frame_shift=cfg.frame_shift,
                       frame_length=cfg.frame_length)


def crop_random(fbank: FbankMatrix, num_frames: int, rng: np.random.Generator) -> FbankMatrix:
    """Uniform random contiguous crop; wrap-pad (repeat) short inputs."""
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    frames = fbank.frames
    T = frames.shape[0]
    if T >= num_frames:
        offset = int(rng.integers(0, T - num_frames + 1))
        out = frames[offset:offset + num_frames]
    else:
        reps = -(-num_frames // T)
        out = np.tile(frames, (reps, 1))[:num_frames]
    return FbankMatrix(frames=out.copy(), frame_shift=fbank.frame_shift,
                       frame_length=fbank.frame_length)


# feature file format: magic "MFAF", u32 version=1, u32 T, u32 F,
# T*F little-endian float32, row-major

_MAGIC = b"MFAF"
_VERSION = 1


def save_fbank(path, fbank: FbankMatrix):
    frames = np.ascontiguousarray(fbank.frames, dtype="<f4")
    T, F = frames.shape
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<III", _VERSION, T, F))
        f.write(frames.tobytes())


def load_fbank(path) -> FbankMatrix:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16 or raw[:4] != _MAGIC:
        raise UnsupportedFormat(f"{path}: not an MFAF feature file")
    version, T, F = struct.unpack("<III", raw[4:16])
    if version != _VERSION:
        raise UnsupportedFormat(f"{path}: unsupported feature version {version}")
    need = 16 + 4 * T * F
    if len(raw) < need:
        raise TruncatedFile(f"{path}: expected {need} bytes, got {len(raw)}")
    frames = np.frombuffer(raw[16:need], dtype="<f4").reshape(T, F).astype(np.float64)
    return FbankMatrix(frames=frames)
