"""Command-line surface: subcommands, exit codes, file outputs, figures."""

import numpy as np
import pytest

from conformer_sv.cli import main, read_embeddings
from conformer_sv.features import AudioBuffer, load_fbank, save_wav
from conformer_sv.scoring import read_scores


def write_tone(path, freq=440.0, seconds=1.0, seed=None):
    n = int(16000 * seconds)
    t = np.arange(n) / 16000.0
    x = 0.4 * np.sin(2 * np.pi * freq * t)
    if seed is not None:
        x = x + np.random.default_rng(seed).normal(scale=0.05, size=n)
    save_wav(path, AudioBuffer(samples=x, sample_rate=16000))


@pytest.fixture(scope="module")
def toy_checkpoint(tmp_path_factory):
    """One small trained model shared by the CLI tests."""
    out = tmp_path_factory.mktemp("ckpt") / "model.mfac"
    rc = main(["train-toy", "--preset", "tiny", "--subsampling", "8",
               "--out", str(out), "--epochs", "1", "--num-speakers", "3",
               "--utts-per-speaker", "2", "--crop-frames", "40",
               "--batch-size", "6", "--seed", "0"])
    assert rc == 0
    return out


# featurize ----------------------------------------------------------------------


def test_featurize_writes_feature_file(tmp_path, capsys):
    wav = tmp_path / "a.wav"
    out = tmp_path / "a.mfaf"
    write_tone(wav, seconds=0.5)
    assert main(["featurize", "--wav", str(wav), "--out", str(out)]) == 0
    fb = load_fbank(out)
    assert fb.frames.shape == (1 + (8000 - 400) // 160, 80)
    assert "T=48 F=80" in capsys.readouterr().out


def test_featurize_missing_wav_is_io_error(tmp_path):
    rc = main(["featurize", "--wav", str(tmp_path / "no.wav"),
               "--out", str(tmp_path / "x.mfaf")])
    assert rc == 2


def test_featurize_bad_wav_is_validation_error(tmp_path):
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"not audio at all" * 10)
    rc = main(["featurize", "--wav", str(bad), "--out", str(tmp_path / "x.mfaf")])
    assert rc == 3


def test_missing_required_flag_is_usage_error(tmp_path):
    assert main(["featurize", "--wav", "x.wav"]) == 1
    assert main(["no-such-command"]) == 1


# train-toy ----------------------------------------------------------------------


def test_train_toy_outputs(tmp_path, capsys):
    out = tmp_path / "m.mfac"
    metrics = tmp_path / "train.log"
    rc = main(["train-toy", "--preset", "tiny", "--subsampling", "8",
               "--out", str(out), "--metrics-out", str(metrics),
               "--epochs", "2", "--num-speakers", "3", "--utts-per-speaker", "2",
               "--crop-frames", "40", "--batch-size", "6", "--seed", "0"])
    assert rc == 0
    assert out.read_bytes()[:4] == b"MFAC"
    lines = metrics.read_text().strip().splitlines()
    assert len(lines) == 2
    assert lines[0].startswith("epoch=0 loss=")
    assert "acc=" in lines[0] and "lr=" in lines[0]
    assert (tmp_path / "train.log.png").stat().st_size > 0
    assert "parameters" in capsys.readouterr().out


def test_train_toy_dump_config(tmp_path, capsys):
    rc = main(["train-toy", "--preset", "tiny", "--no-macaron",
               "--out", str(tmp_path / "unused.mfac"), "--dump-config"])
    assert rc == 0
    text = capsys.readouterr().out
    kv = dict(line.split("=", 1) for line in text.strip().splitlines())
    assert kv["encoder.use_macaron"] == "false"
    assert kv["encoder.d"] == "8"
    assert not (tmp_path / "unused.mfac").exists()


def test_train_toy_config_file_roundtrip(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.txt"
    rc = main(["train-toy", "--preset", "desk", "--block-kind", "transformer",
               "--out", str(tmp_path / "u.mfac"), "--dump-config"])
    assert rc == 0
    cfg_path.write_text(capsys.readouterr().out)
    rc = main(["train-toy", "--config", str(cfg_path),
               "--out", str(tmp_path / "u2.mfac"), "--dump-config"])
    assert rc == 0
    assert "encoder.block_kind=transformer" in capsys.readouterr().out


def test_train_toy_bad_config_key(tmp_path):
    cfg = tmp_path / "bad.txt"
    cfg.write_text("encoder.bogus=1\n")
    rc = main(["train-toy", "--config", str(cfg),
               "--out", str(tmp_path / "m.mfac"), "--dump-config"])
    assert rc == 3


# embed / score / eval chain -----------------------------------------------------


def make_wavs(tmp_path, n=4):
    listing = tmp_path / "wavs.txt"
    lines = []
    for i in range(n):
        p = tmp_path / f"utt{i}.wav"
        write_tone(p, freq=300.0 + 200.0 * (i % 2), seconds=0.5, seed=i)
        lines.append(f"utt{i} {p}")
    listing.write_text("\n".join(lines) + "\n")
    return listing


def test_embed_single_wav_uses_stem(tmp_path, toy_checkpoint):
    wav = tmp_path / "hello.wav"
    write_tone(wav, seconds=0.5)
    out = tmp_path / "emb.txt"
    rc = main(["embed", "--model", str(toy_checkpoint), "--wav", str(wav),
               "--out", str(out)])
    assert rc == 0
    emb = read_embeddings(out)
    assert set(emb) == {"hello"}
    assert emb["hello"].shape == (192,)


def test_embed_wav_list_and_determinism(tmp_path, toy_checkpoint):
    listing = make_wavs(tmp_path)
    out1 = tmp_path / "e1.txt"
    out2 = tmp_path / "e2.txt"
    for out in (out1, out2):
        rc = main(["embed", "--model", str(toy_checkpoint),
                   "--wav-list", str(listing), "--out", str(out)])
        assert rc == 0
    assert out1.read_text() == out2.read_text()
    assert len(read_embeddings(out1)) == 4


def test_embed_without_inputs_is_usage_error(tmp_path, toy_checkpoint):
    rc = main(["embed", "--model", str(toy_checkpoint),
               "--out", str(tmp_path / "e.txt")])
    assert rc == 1


def test_embed_missing_model_is_io_error(tmp_path):
    rc = main(["embed", "--model", str(tmp_path / "no.mfac"), "--wav", "x.wav",
               "--out", str(tmp_path / "e.txt")])
    assert rc == 2


def test_score_and_eval_chain(tmp_path, toy_checkpoint, capsys):
    listing = make_wavs(tmp_path)
    emb_path = tmp_path / "emb.txt"
    main(["embed", "--model", str(toy_checkpoint), "--wav-list", str(listing),
          "--out", str(emb_path)])
    trials = tmp_path / "trials.txt"
    trials.write_text("1 utt0 utt2\n1 utt1 utt3\n0 utt0 utt1\n0 utt2 utt3\n")
    scores = tmp_path / "scores.txt"
    rc = main(["score", "--embeddings", str(emb_path), "--trials", str(trials),
               "--out", str(scores)])
    assert rc == 0
    scored = read_scores(scores)
    assert len(scored) == 4
    assert all(-1.0 <= s.raw <= 1.0 for s in scored)
    capsys.readouterr()

    report = tmp_path / "report.txt"
    rc = main(["eval", "--scores", str(scores), "--out", str(report)])
    assert rc == 0
    text = capsys.readouterr().out
    kv = dict(line.split("=", 1) for line in text.strip().splitlines())
    assert {"eer", "min_dcf", "num_target", "num_nontarget"} <= set(kv)
    assert kv["num_target"] == "2"
    assert report.read_text() == text
    assert (tmp_path / "report.txt.png").stat().st_size > 0


def test_score_with_cohort_adds_normalized_column(tmp_path, toy_checkpoint):
    listing = make_wavs(tmp_path, n=4)
    emb_path = tmp_path / "emb.txt"
    main(["embed", "--model", str(toy_checkpoint), "--wav-list", str(listing),
          "--out", str(emb_path)])
    cohort_list = tmp_path / "cohort_wavs.txt"
    lines = []
    for i in range(4):
        p = tmp_path / f"coh{i}.wav"
        write_tone(p, freq=350.0 + 60.0 * i, seconds=0.5, seed=100 + i)
        lines.append(f"coh{i} {p}")
    cohort_list.write_text("\n".join(lines) + "\n")
    cohort_emb = tmp_path / "cohort.txt"
    main(["embed", "--model", str(toy_checkpoint), "--wav-list",
          str(cohort_list), "--out", str(cohort_emb)])
    trials = tmp_path / "trials.txt"
    trials.write_text("1 utt0 utt2\n0 utt0 utt1\n")
    scores = tmp_path / "scores.txt"
    rc = main(["score", "--embeddings", str(emb_path), "--trials", str(trials),
               "--cohort", str(cohort_emb), "--snorm-topk", "3",
               "--out", str(scores)])
    assert rc == 0
    scored = read_scores(scores)
    assert all(s.normalized is not None for s in scored)


def test_score_unknown_id_is_validation_error(tmp_path, toy_checkpoint):
    listing = make_wavs(tmp_path, n=2)
    emb_path = tmp_path / "emb.txt"
    main(["embed", "--model", str(toy_checkpoint), "--wav-list", str(listing),
          "--out", str(emb_path)])
    trials = tmp_path / "trials.txt"
    trials.write_text("1 utt0 missing\n")
    rc = main(["score", "--embeddings", str(emb_path), "--trials", str(trials),
               "--out", str(tmp_path / "s.txt")])
    assert rc == 3


def test_eval_single_class_is_validation_error(tmp_path):
    scores = tmp_path / "s.txt"
    scores.write_text("1 a b 0.5\n1 c d 0.6\n")
    assert main(["eval", "--scores", str(scores)]) == 3


# benchmark-rtf ------------------------------------------------------------------


def test_benchmark_rtf_report_and_figure(tmp_path, toy_checkpoint, capsys):
    out = tmp_path / "rtf.txt"
    rc = main(["benchmark-rtf", "--model", str(toy_checkpoint),
               "--seconds", "1.0", "--repeats", "3", "--out", str(out)])
    assert rc == 0
    kv = dict(line.split("=", 1) for line in out.read_text().strip().splitlines())
    assert float(kv["rtf"]) > 0
    assert {"stage.fbank", "stage.encode", "stage.aggregate"} <= set(kv)
    assert (tmp_path / "rtf.txt.png").stat().st_size > 0
    capsys.readouterr()


# gradcheck ----------------------------------------------------------------------


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert "parameter tensors pass" in out


def test_gradcheck_detects_corruption(capsys):
    rc = main(["gradcheck", "--seed", "0", "--corrupt", "emb.b"])
    assert rc == 3
    assert "FAIL emb.b" in capsys.readouterr().out
