"""Generate -> split -> train -> evaluate, plus parameter sweeps over the study axes."""

from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .detector import Detection, SampleVerdict, apply_alerts, judge_sample
from .dsp import DSPConfig, extract_matrix
from .metrics import ConfusionTally, compute_metrics
from .model import ALL_CLASSES, DEFAULT_ARCH, NORMAL, DrowsinessModel
from .motion import ActionKind, CorpusSpec, LabeledSample, corpus_plan, synthesize_plan
from .training import FeatureSet, TrainConfig, WindowIndex, stratified_split, train

log = logging.getLogger(__name__)

REPORT_SCHEMA = "drowsense.report/1"
TIMELINESS_FRACTIONS = (0.5, 0.7, 1.0)
DROWSY_ACTIONS = tuple(k.value for k in ActionKind if k.is_drowsy)


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    dsp: DSPConfig = field(default_factory=DSPConfig)
    arch: str = DEFAULT_ARCH
    train: TrainConfig = field(default_factory=TrainConfig)
    threshold: float = 0.5
    cooldown: float = 5.0
    eval_fraction: float = 0.2
    seed: int = 7

    def __post_init__(self):
        if self.corpus.fs != self.dsp.fs:
            raise ValueError(f"corpus rate {self.corpus.fs} Hz != DSP rate {self.dsp.fs} Hz")
        if not math.isclose(self.corpus.frame_length, self.dsp.frame_length):
            raise ValueError("corpus labels and DSP frames use different frame lengths")
        if not 0 < self.eval_fraction < 1:
            raise ValueError("eval_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {"corpus": self.corpus.to_dict(), "dsp": self.dsp.to_dict(), "arch": self.arch,
                "train": self.train.to_dict(), "threshold": self.threshold, "cooldown": self.cooldown,
                "eval_fraction": self.eval_fraction, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        corpus = CorpusSpec.from_dict(d.pop("corpus", {}))
        dsp = DSPConfig.from_dict(d.pop("dsp", {"band": {}}))
        train_cfg = TrainConfig(**d.pop("train", {}))
        return cls(corpus=corpus, dsp=dsp, train=train_cfg, **d)

    def with_frame_length(self, frame_length: float) -> "ExperimentConfig":
        """Same experiment at another frame length; FFT size grows if the decimated frame outgrows it."""
        decimated = math.ceil(round(frame_length * self.dsp.fs) / self.dsp.n)
        fft_size = max(self.dsp.fft_size, 1 << (decimated - 1).bit_length())
        return replace(self, dsp=replace(self.dsp, frame_length=frame_length, fft_size=fft_size),
                       corpus=replace(self.corpus, frame_length=frame_length))


def sample_features(sample: LabeledSample, dsp: DSPConfig) -> tuple[np.ndarray, tuple[str, ...]]:
    feats = extract_matrix(sample.audio.samples, dsp)
    actions = tuple(sample.action.value if step != NORMAL else NORMAL
                    for step in sample.step_labels[:len(feats)])
    return feats, actions


def build_feature_set(samples, dsp: DSPConfig, ids=None) -> FeatureSet:
    """Extract features from labelled samples, dropping the audio as it goes."""
    feats, frame_actions, actions, intervals, out_ids = [], [], [], [], []
    for k, sample in enumerate(samples):
        if not math.isclose(sample.frame_length, dsp.frame_length):
            raise ValueError("sample labels were made for a different frame length")
        f, a = sample_features(sample, dsp)
        feats.append(f)
        frame_actions.append(a)
        actions.append(sample.action.value)
        intervals.append(sample.action_interval)
        out_ids.append(k if ids is None else ids[k])
    return FeatureSet(feats, frame_actions, actions, intervals, out_ids, dsp.frame_length)


def corpus_feature_set(spec: CorpusSpec, seed: int, dsp: DSPConfig) -> FeatureSet:
    plans = corpus_plan(spec, seed)
    return build_feature_set((synthesize_plan(p, spec) for p in plans), dsp, [p.index for p in plans])


def recording_detections(model: DrowsinessModel, data: FeatureSet, threshold: float,
                         cooldown: float) -> list[list[Detection]]:
    """Per-recording detections, computed with batched branch passes."""
    idx = WindowIndex(data, model.max_timesteps)
    everything = np.arange(len(idx))
    probs = model.batch_probs([idx.gather(everything, b.timesteps) for b in model.branches])
    drowsy = model.fusion.forward(np.concatenate(probs, axis=1)) if len(idx) else np.zeros(0)
    out = []
    for s in range(len(data)):
        rows = np.flatnonzero(idx.sample == s)
        alerts = apply_alerts(drowsy[rows], data.frame_length, threshold, cooldown)
        dets = []
        for j, row in enumerate(rows):
            p = tuple(pr[row] for pr in probs)
            dets.append(Detection(j, (j + 1) * data.frame_length, float(drowsy[row]), bool(alerts[j]),
                                  model.frame_action(p), p))
        out.append(dets)
    return out


def evaluate(model: DrowsinessModel, data: FeatureSet, threshold: float = 0.5,
             cooldown: float = 5.0) -> list[SampleVerdict]:
    return [judge_sample(dets, truth, interval)
            for dets, truth, interval in zip(recording_detections(model, data, threshold, cooldown),
                                             data.actions, data.intervals)]


def measure_timeliness(verdicts: list[SampleVerdict], fractions=TIMELINESS_FRACTIONS) -> dict:
    """Latency of the first matching alert for each correctly detected action.

    Missed actions are counted but kept out of the latency distribution.
    """
    out, pooled = {}, {a: [] for a in fractions}
    for action in DROWSY_ACTIONS:
        total_time = ActionKind.parse(action).total_time
        mine = [v for v in verdicts if v.truth == action]
        latencies = sorted(v.latency for v in mine if v.drowsy and v.predicted == action)
        missed = sum(1 for v in mine if not v.drowsy)
        entry = {"total_time": total_time, "n": len(mine), "correct": len(latencies), "missed": missed,
                 "cdf": [[float(t), (k + 1) / len(latencies)] for k, t in enumerate(latencies)],
                 "within": {}}
        for alpha in fractions:
            hits = [t <= alpha * total_time + 1e-9 for t in latencies]
            entry["within"][str(alpha)] = float(np.mean(hits)) if hits else None
            pooled[alpha] += hits
        if latencies:
            entry["median_latency"] = float(np.median(latencies))
        out[action] = entry
    out["all"] = {"within": {str(a): float(np.mean(h)) if h else None for a, h in pooled.items()}}
    return out


def summarise(verdicts: list[SampleVerdict]) -> dict:
    truth = [v.truth for v in verdicts]
    pred = [v.predicted for v in verdicts]
    tally = ConfusionTally.from_pairs(truth, pred, list(ALL_CLASSES))
    per_action = {}
    for action in ALL_CLASSES:
        mine = [v for v in verdicts if v.truth == action]
        if mine:
            per_action[action] = float(np.mean([v.predicted == action for v in mine]))
    is_drowsy = [v.truth != NORMAL for v in verdicts]
    called = [v.drowsy for v in verdicts]
    binary = ConfusionTally.from_pairs(["drowsy" if d else "normal" for d in is_drowsy],
                                       ["drowsy" if c else "normal" for c in called], ["drowsy", "normal"])
    return {
        "n_samples": len(verdicts),
        "per_action_accuracy": per_action,
        "drowsy_accuracy": float(np.mean([d == c for d, c in zip(is_drowsy, called)])) if verdicts else None,
        "metrics": compute_metrics(tally),
        "drowsy_metrics": compute_metrics(binary)["drowsy"],
        "confusion": {f"{t}->{p}": n for (t, p), n in sorted(tally.confusion.items())},
        "timeliness": measure_timeliness(verdicts),
    }


def split_ids(actions, eval_fraction: float, seed: int):
    return stratified_split(actions, [1 - eval_fraction, eval_fraction], seed)


def run_experiment(config: ExperimentConfig, data: FeatureSet | None = None) -> tuple[dict, DrowsinessModel]:
    """Full pipeline; returns the report and the trained model.

    Everything except ``report["meta"]`` is a deterministic function of the config.
    """
    t0 = time.perf_counter()
    if data is None:
        data = corpus_feature_set(config.corpus, config.seed, config.dsp)
    t_data = time.perf_counter()
    fit, held = split_ids(data.actions, config.eval_fraction, config.seed)
    fit_ids = {data.ids[i] for i in fit}
    held_ids = {data.ids[i] for i in held}
    if fit_ids & held_ids:
        raise RuntimeError("train and eval partitions share samples")
    train_cfg = replace(config.train, seed=config.train.seed + config.seed)
    model, history = train(data.subset(fit), config.arch, train_cfg, config.dsp)
    t_train = time.perf_counter()
    verdicts = evaluate(model, data.subset(held), config.threshold, config.cooldown)
    t_eval = time.perf_counter()
    timings = {f"{name}": [e.pop("seconds") for e in hist] for name, hist in history["branches"].items()}
    report = {
        "schema": REPORT_SCHEMA,
        "meta": {"created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
                 "seconds": {"data": t_data - t0, "train": t_train - t_data, "eval": t_eval - t_train,
                             "epochs": timings}},
        "config": config.to_dict(),
        "dsp_fingerprint": config.dsp.fingerprint(),
        "split": {"train": len(fit), "eval": len(held), "overlap": len(fit_ids & held_ids)},
        "results": summarise(verdicts),
        "training": history,
    }
    return report, model


def report_table(report: dict) -> str:
    """Aligned plain-text summary of one report."""
    res = report["results"]
    lines = [f"architecture {report['config']['arch']}   eval samples {res['n_samples']}",
             f"{'class':<14}{'accuracy':>10}{'precision':>11}{'recall':>9}{'false':>8}{'missing':>9}"]
    fmt = lambda v: "   n/a" if v is None else f"{v:6.3f}"
    for cls, acc in res["per_action_accuracy"].items():
        m = res["metrics"][cls]
        lines.append(f"{cls:<14}{fmt(acc):>10}{fmt(m['precision']):>11}{fmt(m['recall']):>9}"
                     f"{fmt(m['false_alarm']):>8}{fmt(m['missing_alarm']):>9}")
    dm = res["drowsy_metrics"]
    lines.append(f"{'drowsy':<14}{fmt(res['drowsy_accuracy']):>10}{fmt(dm['precision']):>11}"
                 f"{fmt(dm['recall']):>9}{fmt(dm['false_alarm']):>8}{fmt(dm['missing_alarm']):>9}")
    lines.append("detected within a fraction of total time:")
    for action, entry in res["timeliness"].items():
        within = "  ".join(f"{a}T={fmt(v)}" for a, v in entry["within"].items())
        lines.append(f"  {action:<12}{within}")
    return "\n".join(lines)


def write_report(report: dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    (out / "report.txt").write_text(report_table(report) + "\n")
    with open(out / "latency_cdf.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["action", "latency_s", "fraction"])
        for action, entry in report["results"]["timeliness"].items():
            for latency, frac in entry.get("cdf", []):
                w.writerow([action, latency, frac])
    return out


SWEEP_AXES = ("frame_length", "arch", "per_class")


def sweep(config: ExperimentConfig, axis: str, values, out_dir=None) -> list[dict]:
    """One experiment per value along ``axis``; each row is a compact result line."""
    from .model import ARCHITECTURES

    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}")
    rows = []
    shared = None
    for value in values:
        if axis == "frame_length":
            cfg = config.with_frame_length(float(value))
            data = None
        elif axis == "arch":
            if value not in ARCHITECTURES:
                raise ValueError(f"unknown architecture {value!r}")
            cfg = replace(config, arch=value)
            # every architecture sees the same corpus
            shared = shared or corpus_feature_set(config.corpus, config.seed, config.dsp)
            data = shared
        else:
            counts = {k: int(value) for k in config.corpus.counts}
            cfg = replace(config, corpus=replace(config.corpus, counts=counts))
            data = None
        report, _ = run_experiment(cfg, data)
        res = report["results"]
        row = {"axis": axis, "value": value, "fft_size": cfg.dsp.fft_size,
               **{f"acc_{k}": v for k, v in res["per_action_accuracy"].items()},
               "drowsy_accuracy": res["drowsy_accuracy"],
               "within_0.7T": res["timeliness"]["all"]["within"]["0.7"]}
        rows.append(row)
        if out_dir is not None:
            write_report(report, Path(out_dir) / f"{axis}={value}")
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        with open(Path(out_dir) / f"sweep_{axis}.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=sorted({k for r in rows for k in r}))
            w.writeheader()
            w.writerows(rows)
    return rows
