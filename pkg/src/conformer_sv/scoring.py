"""Evaluation protocol: cosine scoring, adaptive s-norm, EER, minDCF, RTF."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, no_grad
from .errors import DegenerateCohort, EmptyClass, ZeroVector


@dataclass
class Trial:
    label: int  # 1 target, 0 nontarget
    enroll_id: str
    test_id: str


@dataclass
class DcfParams:
    p_target: float = 0.01
    c_fa: float = 1.0
    c_miss: float = 1.0


@dataclass
class ScoredTrial:
    trial: Trial
    raw: float
    normalized: float | None = None

    @property
    def score(self):
        return self.raw if self.normalized is None else self.normalized


def cosine_score(e1, e2) -> float:
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    n1 = np.linalg.norm(e1)
    n2 = np.linalg.norm(e2)
    if n1 == 0.0 or n2 == 0.0:
        raise ZeroVector("cosine score of a zero embedding")
    return float(np.dot(e1, e2) / (n1 * n2))


def score_trials(trials, embeddings: dict) -> list:
    """Raw cosine score per trial; ids must resolve in `embeddings`."""
    out = []
    for t in trials:
        for tid in (t.enroll_id, t.test_id):
            if tid not in embeddings:
                raise KeyError(f"unknown id in trials: {tid!r}")
        out.append(ScoredTrial(trial=t,
                               raw=cosine_score(embeddings[t.enroll_id],
                                                embeddings[t.test_id])))
    return out


def topk_stats(cohort_scores, top_k):
    """Mean/std of the top_k highest cohort scores."""
    top = np.sort(np.asarray(cohort_scores, dtype=np.float64))[-top_k:]
    mu = float(top.mean())
    sd = float(top.std())
    if sd < 1e-12:
        raise DegenerateCohort(f"cohort std {sd} below 1e-12")
    return mu, sd


def snorm_score(raw, enroll_cohort_scores, test_cohort_scores, top_k):
    """s' = 0.5 * ((s - mu_e)/sd_e + (s - mu_t)/sd_t) over top-k cohort stats."""
    mu_e, sd_e = topk_stats(enroll_cohort_scores, top_k)
    mu_t, sd_t = topk_stats(test_cohort_scores, top_k)
    return 0.5 * ((raw - mu_e) / sd_e + (raw - mu_t) / sd_t)


def adaptive_snorm(scored, embeddings: dict, cohort, top_k=None) -> list:
    """Normalize each raw score by the top-k cohort statistics of both sides."""
    cohort = np.asarray(cohort, dtype=np.float64)
    if top_k is None:
        top_k = min(300, len(cohort))
    if not 2 <= top_k <= len(cohort):
        raise ValueError(f"top_k={top_k} outside [2, cohort size {len(cohort)}]")
    cm = cohort / np.linalg.norm(cohort, axis=1, keepdims=True)
    cohort_scores = {}
    out = []
    for st in scored:
        for tid in (st.trial.enroll_id, st.trial.test_id):
            if tid not in cohort_scores:
                e = np.asarray(embeddings[tid], dtype=np.float64)
                cohort_scores[tid] = cm @ (e / np.linalg.norm(e))
        norm = snorm_score(st.raw, cohort_scores[st.trial.enroll_id],
                           cohort_scores[st.trial.test_id], top_k)
        out.append(ScoredTrial(trial=st.trial, raw=st.raw, normalized=norm))
    return out


def _split_scores(scored):
    targets = np.array([s.score for s in scored if s.trial.label == 1])
    nontargets = np.array([s.score for s in scored if s.trial.label == 0])
    if targets.size == 0 or nontargets.size == 0:
        raise EmptyClass("need at least one target and one nontarget trial")
    return targets, nontargets


def _thresholds(targets, nontargets):
    """Midpoints between adjacent distinct scores, plus +-inf sentinels."""
    s = np.unique(np.concatenate([targets, nontargets]))
    mids = (s[:-1] + s[1:]) / 2.0 if s.size > 1 else np.empty(0)
    return np.concatenate([[-np.inf], mids, [np.inf]])


def _far_frr(targets, nontargets, thresholds):
    far = (nontargets[None, :] >= thresholds[:, None]).mean(axis=1)
    frr = (targets[None, :] < thresholds[:, None]).mean(axis=1)
    return far, frr


def compute_eer(scored) -> tuple:
    """(EER, threshold) by linear interpolation at the FAR = FRR crossing."""
    targets, nontargets = _split_scores(scored)
    th = _thresholds(targets, nontargets)
    far, frr = _far_frr(targets, nontargets, th)
    diff = far - frr  # decreasing in threshold
    idx = np.where(diff <= 0)[0][0]
    if idx == 0 or diff[idx] == 0:
        return float((far[idx] + frr[idx]) / 2.0), float(th[idx])
    f1, m1, t1 = far[idx - 1], frr[idx - 1], th[idx - 1]
    f2, m2, t2 = far[idx], frr[idx], th[idx]
    denom = (f2 - f1) - (m2 - m1)
    w = (m1 - f1) / denom if denom != 0 else 0.5
    eer = f1 + w * (f2 - f1)
    thr = t1 + w * (t2 - t1) if np.isfinite(t1) and np.isfinite(t2) else t2
    return float(eer), float(thr)


def compute_min_dcf(scored, params: DcfParams | None = None) -> tuple:
    """Minimum normalized detection cost over all thresholds."""
    p = params or DcfParams()
    targets, nontargets = _split_scores(scored)
    th = _thresholds(targets, nontargets)
    far, frr = _far_frr(targets, nontargets, th)
    cost = p.c_miss * p.p_target * frr + p.c_fa * (1 - p.p_target) * far
    norm = min(p.c_miss * p.p_target, p.c_fa * (1 - p.p_target))
    i = int(np.argmin(cost))
    return float(cost[i] / norm), float(th[i])


# trial / score file formats --------------------------------------------------


def read_trials(path) -> list:
    trials = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 or parts[0] not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: expected '<0|1> <enroll> <test>'")
            trials.append(Trial(label=int(parts[0]), enroll_id=parts[1],
                                test_id=parts[2]))
    return trials


def write_scores(path, scored):
    with open(path, "w") as f:
        for s in scored:
            line = f"{s.trial.label} {s.trial.enroll_id} {s.trial.test_id} {s.raw:.6f}"
            if s.normalized is not None:
                line += f" {s.normalized:.6f}"
            f.write(line + "\n")


def read_scores(path) -> list:
    scored = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) not in (4, 5) or parts[0] not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: malformed score line")
            scored.append(ScoredTrial(
                trial=Trial(label=int(parts[0]), enroll_id=parts[1], test_id=parts[2]),
                raw=float(parts[3]),
                normalized=float(parts[4]) if len(parts) == 5 else None))
    return scored


def metrics_report(scored, params: DcfParams | None = None) -> dict:
    eer, eer_th = compute_eer(scored)
    mdcf, mdcf_th = compute_min_dcf(scored, params)
    targets, nontargets = _split_scores(scored)
    return {
        "eer": eer,
        "eer_threshold": eer_th,
        "min_dcf": mdcf,
        "min_dcf_threshold": mdcf_th,
        "num_target": targets.size,
        "num_nontarget": nontargets.size,
    }


# RTF benchmarking ------------------------------------------------------------


@dataclass
class RtfResult:
    rtf: float
    audio_seconds: float
    stage_seconds: dict = field(default_factory=dict)
    runs: list = field(default_factory=list)


def benchmark_rtf(model, utterance_seconds=30.0, repeats=5, sample_rate=16000,
                  seed=0) -> RtfResult:
    """Median end-to-end (fbank -> embedding) wall time over audio duration.

    Single execution context; one warmup pass precedes the timed repeats.
    """
    from .features import AudioBuffer, compute_fbank

    if repeats < 3:
        raise ValueError("repeats must be >= 3")
    rng = np.random.default_rng(seed)
    samples = rng.uniform(-0.5, 0.5, size=int(utterance_seconds * sample_rate))
    audio = AudioBuffer(samples=samples, sample_rate=sample_rate)
    durations = []
    stage_runs = {"fbank": [], "encode": [], "aggregate": []}
    from . import aggregator as agg_mod
    from . import encoder as enc_mod

    for rep in range(repeats + 1):  # first pass is warmup
        t0 = time.perf_counter()
        fb = compute_fbank(audio)
        t1 = time.perf_counter()
        with no_grad():
            x = Tensor(fb.frames[None])
            blocks = enc_mod.encode(x, model.params, model.cfg, train=False)
            t2 = time.perf_counter()
            agg_mod.aggregate(blocks, model.params, model.cfg, train=False)
        t3 = time.perf_counter()
        if rep == 0:
            continue
        durations.append(t3 - t0)
        stage_runs["fbank"].append(t1 - t0)
        stage_runs["encode"].append(t2 - t1)
        stage_runs["aggregate"].append(t3 - t2)
    return RtfResult(
        rtf=float(np.median(durations)) / utterance_seconds,
        audio_seconds=utterance_seconds,
        stage_seconds={k: float(np.median(v)) for k, v in stage_runs.items()},
        runs=durations,
    )
