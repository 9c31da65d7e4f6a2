"""Command-line surface: featurize, train-toy, embed, score, eval,
benchmark-rtf and gradcheck.

Exit codes: 0 success, 1 usage, 2 I/O, 3 validation. Report-producing
commands also render a matplotlib figure next to their delimited output.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import scoring, training
from .config import (DESK_ENCODER, TINY_ENCODER, EncoderConfig, TrainConfig,
                     config_from_kv, config_to_kv, format_kv, parse_kv)
from .errors import ConfigError, PipelineError
from .features import FbankConfig, compute_fbank, load_wav, save_fbank
from .gradcheck import run_gradcheck
from .model import SpeakerModel


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _figure_path(out_path):
    return os.fspath(out_path) + ".png"


def _plot_training(metrics, png_path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = [m["epoch"] for m in metrics]
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(epochs, [m["loss"] for m in metrics], "o-", color="tab:blue", label="loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(epochs, [m["acc"] for m in metrics], "s--", color="tab:orange", label="accuracy")
    ax2.set_ylabel("train accuracy", color="tab:orange")
    ax2.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


def _plot_score_hist(scored, png_path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    targets = [s.score for s in scored if s.trial.label == 1]
    nontargets = [s.score for s in scored if s.trial.label == 0]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(nontargets, bins=40, alpha=0.6, label="nontarget", color="tab:red")
    ax.hist(targets, bins=40, alpha=0.6, label="target", color="tab:green")
    ax.set_xlabel("score")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


def _plot_rtf(result, png_path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = list(result.stage_seconds)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(names, [result.stage_seconds[n] for n in names], color="tab:blue")
    ax.set_ylabel("median seconds per pass")
    ax.set_title(f"RTF {result.rtf:.4f} on {result.audio_seconds:.0f}s audio")
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


# config assembly --------------------------------------------------------------


_PRESETS = {"tiny": TINY_ENCODER, "desk": DESK_ENCODER, "full": {}}


def _add_model_flags(sub):
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--preset", choices=sorted(_PRESETS), default="desk")
    sub.add_argument("--subsampling", type=int, choices=(1, 2, 4, 8))
    sub.add_argument("--no-relative-pe", action="store_true")
    sub.add_argument("--no-macaron", action="store_true")
    sub.add_argument("--no-conv", action="store_true")
    sub.add_argument("--no-mfa", action="store_true")
    sub.add_argument("--block-kind", choices=("conformer", "transformer"))
    sub.add_argument("--dump-config", action="store_true",
                     help="print the effective config and exit")


def _build_configs(args) -> tuple[EncoderConfig, TrainConfig]:
    kv = {}
    if args.config:
        with open(args.config) as f:
            kv = parse_kv(f.read())
    enc, train = config_from_kv(kv)
    preset = _PRESETS[args.preset]
    if not kv:  # a config file takes precedence over the preset
        enc = replace(enc, **preset)
    if args.subsampling is not None:
        enc = replace(enc, subsampling_rate=args.subsampling)
    if args.no_relative_pe:
        enc = replace(enc, use_relative_pe=False)
    if args.no_macaron:
        enc = replace(enc, use_macaron=False)
    if args.no_conv:
        enc = replace(enc, use_conv_module=False)
    if args.no_mfa:
        enc = replace(enc, use_mfa=False)
    if args.block_kind:
        enc = replace(enc, block_kind=args.block_kind)
    if getattr(args, "seed", None) is not None:
        train = replace(train, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        train = replace(train, epochs=args.epochs)
    if getattr(args, "batch_size", None) is not None:
        train = replace(train, batch_size=args.batch_size)
    if getattr(args, "crop_frames", None) is not None:
        train = replace(train, crop_frames=args.crop_frames)
    return enc.validate(), train.validate()


# subcommands ------------------------------------------------------------------


def cmd_featurize(args):
    audio = load_wav(args.wav)
    fbank = compute_fbank(audio, FbankConfig(mean_norm=not args.no_mean_norm))
    save_fbank(args.out, fbank)
    print(f"wrote {args.out}: T={fbank.frames.shape[0]} F={fbank.frames.shape[1]}")
    return 0


def cmd_train_toy(args):
    enc_cfg, train_cfg = _build_configs(args)
    if args.dump_config:
        sys.stdout.write(format_kv(config_to_kv(enc_cfg, train_cfg)))
        return 0
    data = training.make_toy_dataset(args.num_speakers, args.utts_per_speaker,
                                     seed=train_cfg.seed,
                                     num_mels=enc_cfg.num_mels)
    model = SpeakerModel.from_config(enc_cfg, seed=train_cfg.seed)
    head = training.AMSoftmaxHead(args.num_speakers, enc_cfg.embedding_dim,
                                  margin=train_cfg.margin, scale=train_cfg.scale,
                                  rng=np.random.default_rng(train_cfg.seed + 1))
    lines = []

    def log(line):
        lines.append(line)
        print(line)

    metrics = training.train(model, head, data, train_cfg, log=log)
    training.save_checkpoint(args.out, model, train_cfg, head)
    if args.metrics_out:
        with open(args.metrics_out, "w") as f:
            f.write("\n".join(lines) + "\n")
        _plot_training(metrics, _figure_path(args.metrics_out))
    print(f"wrote checkpoint {args.out} ({model.param_count()} parameters)")
    return 0


def _iter_wav_jobs(args):
    if args.wav:
        stem = os.path.splitext(os.path.basename(args.wav))[0]
        yield stem, args.wav
    if args.wav_list:
        with open(args.wav_list) as f:
            for line in f:
                parts = line.split()
                if not parts:
                    continue
                if len(parts) == 2:
                    yield parts[0], parts[1]
                else:
                    yield os.path.splitext(os.path.basename(parts[0]))[0], parts[0]


def cmd_embed(args):
    model, _, _ = training.load_checkpoint(args.model)
    jobs = list(_iter_wav_jobs(args))
    if not jobs:
        raise UsageError("provide --wav or --wav-list")
    with open(args.out, "w") as f:
        for utt_id, path in jobs:
            fbank = compute_fbank(load_wav(path))
            emb = model.embed(fbank.frames)
            f.write(utt_id + " " + " ".join(f"{v:.8e}" for v in emb) + "\n")
    print(f"wrote {len(jobs)} embeddings to {args.out}")
    return 0


def read_embeddings(path) -> dict:
    out = {}
    with open(path) as f:
        for line in f:
            parts = line.split()
            if parts:
                out[parts[0]] = np.array([float(v) for v in parts[1:]])
    return out


def cmd_score(args):
    embeddings = read_embeddings(args.embeddings)
    trials = scoring.read_trials(args.trials)
    try:
        scored = scoring.score_trials(trials, embeddings)
    except KeyError as e:
        raise ConfigError(str(e)) from e
    if args.cohort:
        cohort = list(read_embeddings(args.cohort).values())
        scored = scoring.adaptive_snorm(scored, embeddings, cohort,
                                        top_k=args.snorm_topk)
    scoring.write_scores(args.out, scored)
    print(f"wrote {len(scored)} scores to {args.out}")
    return 0


def cmd_eval(args):
    scored = scoring.read_scores(args.scores)
    params = scoring.DcfParams(p_target=args.p_target, c_fa=args.c_fa,
                               c_miss=args.c_miss)
    report = scoring.metrics_report(scored, params)
    report["p_target"] = args.p_target
    report["c_fa"] = args.c_fa
    report["c_miss"] = args.c_miss
    text = format_kv({k: v for k, v in report.items()})
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        _plot_score_hist(scored, _figure_path(args.out))
    return 0


def cmd_benchmark_rtf(args):
    model, _, _ = training.load_checkpoint(args.model)
    result = scoring.benchmark_rtf(model, utterance_seconds=args.seconds,
                                   repeats=args.repeats)
    lines = {"rtf": f"{result.rtf:.6f}", "audio_seconds": result.audio_seconds,
             "repeats": args.repeats}
    for name, sec in result.stage_seconds.items():
        lines[f"stage.{name}"] = f"{sec:.6f}"
    text = format_kv(lines)
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        _plot_rtf(result, _figure_path(args.out))
    return 0


def cmd_gradcheck(args):
    results = run_gradcheck(preset=args.preset, seed=args.seed,
                            corrupt=args.corrupt)
    failed = [r for r in results if not r.passed]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name} rel_err={r.rel_err:.3e}")
    print(f"{len(results) - len(failed)}/{len(results)} parameter tensors pass")
    return 0 if not failed else 3


# entry point ------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="conformer-sv",
                description="Speaker-embedding pipeline: features, Conformer "
                            "encoder, training, scoring and benchmarking")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("featurize", help="WAV -> MFAF feature file")
    s.add_argument("--wav", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--no-mean-norm", action="store_true")
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("train-toy", help="train on synthetic speakers")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--crop-frames", type=int)
    s.add_argument("--num-speakers", type=int, default=20)
    s.add_argument("--utts-per-speaker", type=int, default=10)
    s.add_argument("--metrics-out")
    _add_model_flags(s)
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("embed", help="extract embeddings from WAV files")
    s.add_argument("--model", required=True)
    s.add_argument("--wav")
    s.add_argument("--wav-list")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("score", help="score a trial list")
    s.add_argument("--embeddings", required=True,
                   help="embedding table from the embed command")
    s.add_argument("--trials", required=True)
    s.add_argument("--cohort", help="cohort embedding table for adaptive s-norm")
    s.add_argument("--snorm-topk", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("eval", help="EER / minDCF from a score file")
    s.add_argument("--scores", required=True)
    s.add_argument("--p-target", type=float, default=0.01)
    s.add_argument("--c-fa", type=float, default=1.0)
    s.add_argument("--c-miss", type=float, default=1.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("benchmark-rtf", help="real-time factor benchmark")
    s.add_argument("--model", required=True)
    s.add_argument("--seconds", type=float, default=30.0)
    s.add_argument("--repeats", type=int, default=5)
    s.add_argument("--out")
    s.set_defaults(func=cmd_benchmark_rtf)

    s = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    s.add_argument("--preset", choices=("tiny",), default="tiny")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--corrupt", help="test hook: corrupt this tensor's gradient")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (FileNotFoundError, IsADirectoryError, PermissionError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 2
    except (PipelineError, ValueError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
