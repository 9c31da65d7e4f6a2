"""Front-end: WAV parsing, framing, mel filterbank, cropping, feature files."""

import struct

import numpy as np
import pytest

from conformer_sv.errors import TooShort, TruncatedFile, UnsupportedFormat
from conformer_sv.features import (AudioBuffer, FbankConfig, FbankMatrix,
                                   compute_fbank, crop_random, load_fbank,
                                   load_wav, mel_filterbank, save_fbank,
                                   save_wav)


def wav_bytes(samples, rate=16000, channels=1, bits=16, data_size=None):
    pcm = np.asarray(samples, dtype="<i2").tobytes()
    if data_size is None:
        data_size = len(pcm)
    body = (b"fmt " + struct.pack("<IHHIIHH", 16, 1, channels, rate,
                                  rate * channels * bits // 8,
                                  channels * bits // 8, bits)
            + b"data" + struct.pack("<I", data_size) + pcm)
    return b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body


def write_wav(path, samples, **kwargs):
    path.write_bytes(wav_bytes(samples, **kwargs))


def test_load_wav_length_passthrough(tmp_path):
    p = tmp_path / "a.wav"
    write_wav(p, np.arange(48000) % 100 - 50)
    buf = load_wav(p)
    assert buf.samples.shape == (48000,)
    assert buf.sample_rate == 16000
    assert len(buf.samples) / buf.sample_rate == 3.0


def test_load_wav_zeros(tmp_path):
    p = tmp_path / "z.wav"
    write_wav(p, np.zeros(1000, dtype=np.int16))
    assert np.array_equal(load_wav(p).samples, np.zeros(1000))


def test_load_wav_scaling(tmp_path):
    p = tmp_path / "s.wav"
    write_wav(p, [-32768, 0, 16384])
    assert np.allclose(load_wav(p).samples, [-1.0, 0.0, 0.5])


def test_load_wav_truncated(tmp_path):
    p = tmp_path / "t.wav"
    p.write_bytes(wav_bytes(np.zeros(100, dtype=np.int16), data_size=400))
    with pytest.raises(TruncatedFile):
        load_wav(p)


def test_load_wav_stereo_rejected(tmp_path):
    p = tmp_path / "st.wav"
    write_wav(p, np.zeros(100, dtype=np.int16), channels=2)
    with pytest.raises(UnsupportedFormat):
        load_wav(p)


def test_load_wav_wrong_bits_rejected(tmp_path):
    p = tmp_path / "b8.wav"
    write_wav(p, np.zeros(100, dtype=np.int16), bits=8)
    with pytest.raises(UnsupportedFormat):
        load_wav(p)


def test_load_wav_bad_magic(tmp_path):
    p = tmp_path / "bad.wav"
    p.write_bytes(b"OGGS" + b"\x00" * 100)
    with pytest.raises(UnsupportedFormat):
        load_wav(p)


def test_load_wav_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_wav(tmp_path / "nope.wav")


def test_save_load_roundtrip(tmp_path, rng):
    p = tmp_path / "r.wav"
    samples = rng.uniform(-0.9, 0.9, size=5000)
    save_wav(p, AudioBuffer(samples=samples, sample_rate=16000))
    back = load_wav(p)
    assert np.abs(back.samples - samples).max() < 1.0 / 32768


# fbank -------------------------------------------------------------------------


def _audio(samples):
    return AudioBuffer(samples=np.asarray(samples, dtype=np.float64),
                       sample_rate=16000)


@pytest.mark.parametrize("N", [400, 401, 48000, 16000, 559, 560])
def test_framing_formula(N, rng):
    fb = compute_fbank(_audio(rng.normal(scale=0.1, size=N)))
    assert fb.frames.shape == (1 + (N - 400) // 160, 80)


def test_three_seconds_gives_298_frames(rng):
    fb = compute_fbank(_audio(rng.normal(scale=0.1, size=48000)))
    assert fb.frames.shape == (298, 80)


def test_too_short_rejected():
    with pytest.raises(TooShort):
        compute_fbank(_audio(np.zeros(399)))


def test_zero_audio_all_zero_after_norm():
    fb = compute_fbank(_audio(np.zeros(16000)))
    assert np.allclose(fb.frames, 0.0)


def test_sine_energy_in_nearest_mel_bin():
    # independent oracle: mel filter table evaluated at the tone frequency
    freq = 1000.0
    t = np.arange(16000) / 16000.0
    fb = compute_fbank(_audio(0.5 * np.sin(2 * np.pi * freq * t)),
                       FbankConfig(mean_norm=False))
    mean_energy = fb.frames.mean(axis=0)
    filters = mel_filterbank(80, 512, 16000, 20.0, 7600.0)
    response_at_tone = np.array([
        np.interp(freq, np.arange(257) * 16000 / 512, filt) for filt in filters
    ])
    assert mean_energy.argmax() == response_at_tone.argmax()


def test_mean_normalization_property(rng):
    fb = compute_fbank(_audio(rng.normal(scale=0.3, size=24000)))
    assert np.abs(fb.frames.mean(axis=0)).max() < 1e-6


def test_determinism(rng):
    x = rng.normal(scale=0.3, size=20000)
    a = compute_fbank(_audio(x)).frames
    b = compute_fbank(_audio(x)).frames
    assert np.array_equal(a, b)


def test_gain_invariance_after_norm(rng):
    x = rng.normal(scale=0.2, size=32000)
    a = compute_fbank(_audio(x)).frames
    b = compute_fbank(_audio(3.7 * x)).frames
    assert np.abs(a - b).max() < 1e-5


# crop --------------------------------------------------------------------------


def _fb(T, F=80, rng=None):
    data = (rng.normal(size=(T, F)) if rng is not None
            else np.arange(T * F, dtype=float).reshape(T, F))
    return FbankMatrix(frames=data)


def test_crop_identity_when_equal(rng):
    fb = _fb(298, rng=rng)
    out = crop_random(fb, 298, np.random.default_rng(0))
    assert np.array_equal(out.frames, fb.frames)


def test_crop_wrap_rule():
    fb = _fb(100)
    out = crop_random(fb, 300, np.random.default_rng(0))
    assert out.frames.shape == (300, 80)
    assert np.array_equal(out.frames[:100], fb.frames)
    assert np.array_equal(out.frames[100:200], fb.frames)
    assert np.array_equal(out.frames[200:300], fb.frames)


def test_crop_seeded_determinism(rng):
    fb = _fb(298, rng=rng)
    a = crop_random(fb, 150, np.random.default_rng(99)).frames
    b = crop_random(fb, 150, np.random.default_rng(99)).frames
    assert np.array_equal(a, b)
    assert a.shape == (150, 80)


def test_crop_is_contiguous_slice(rng):
    fb = _fb(50, rng=rng)
    out = crop_random(fb, 20, np.random.default_rng(3)).frames
    hits = [o for o in range(31) if np.array_equal(fb.frames[o:o + 20], out)]
    assert len(hits) == 1


# feature file -------------------------------------------------------------------


def test_feature_file_roundtrip(tmp_path, rng):
    fb = _fb(17, rng=rng)
    p1 = tmp_path / "a.mfaf"
    p2 = tmp_path / "b.mfaf"
    save_fbank(p1, fb)
    back = load_fbank(p1)
    save_fbank(p2, back)
    assert p1.read_bytes() == p2.read_bytes()
    assert np.allclose(back.frames, fb.frames, atol=1e-6)


def test_feature_file_header(tmp_path):
    fb = _fb(3)
    p = tmp_path / "h.mfaf"
    save_fbank(p, fb)
    raw = p.read_bytes()
    assert raw[:4] == b"MFAF"
    assert struct.unpack("<III", raw[4:16]) == (1, 3, 80)
    assert len(raw) == 16 + 4 * 3 * 80


def test_feature_file_truncated(tmp_path):
    fb = _fb(3)
    p = tmp_path / "t.mfaf"
    save_fbank(p, fb)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(TruncatedFile):
        load_fbank(p)


def test_feature_file_bad_magic(tmp_path):
    p = tmp_path / "bad.mfaf"
    p.write_bytes(b"XXXX" + b"\x00" * 32)
    with pytest.raises(UnsupportedFormat):
        load_fbank(p)
