"""Command-line entry point: ``drowsense <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import yaml

from . import detector as det
from .dsp import DSPConfig, extract_matrix
from .experiment import (SWEEP_AXES, ExperimentConfig, build_feature_set, evaluate, report_table,
                         run_experiment, summarise, sweep, write_report)
from .model import ARCHITECTURES, DEFAULT_ARCH
from .motion import corpus_plan, synthesize_plan
from .signal import read_wav, segment_frames
from .storage import (load_dataset, load_features, load_model, read_manifest, save_dataset,
                      save_features, save_model, write_detections)
from .training import train

log = logging.getLogger("drowsense")

OUT_ROOT_ENV = "DROWSENSE_OUT"


def _out_path(path: str) -> Path:
    """Relative output paths resolve under $DROWSENSE_OUT when it is set."""
    p = Path(path)
    root = os.environ.get(OUT_ROOT_ENV)
    return Path(root) / p if root and not p.is_absolute() else p


def _deep_update(base: dict, updates: dict) -> dict:
    for k, v in updates.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v
    return base


def load_config(args) -> ExperimentConfig:
    """Defaults, then the YAML config file, then command-line flags."""
    tree = ExperimentConfig().to_dict()
    if getattr(args, "config", None):
        _deep_update(tree, yaml.safe_load(Path(args.config).read_text()) or {})
    if getattr(args, "seed", None) is not None:
        tree["seed"] = args.seed
    if getattr(args, "arch", None):
        tree["arch"] = args.arch
    if getattr(args, "per_class", None) is not None:
        tree["corpus"]["counts"] = {k: args.per_class for k in tree["corpus"]["counts"]}
    if getattr(args, "epochs", None) is not None:
        tree["train"]["epochs"] = args.epochs
    if getattr(args, "threshold", None) is not None:
        tree["threshold"] = args.threshold
    config = ExperimentConfig.from_dict(tree)
    if getattr(args, "frame_length", None) is not None:
        config = config.with_frame_length(args.frame_length)
    print(f"resolved config (seed {config.seed}): {json.dumps(config.to_dict(), sort_keys=True)}",
          file=sys.stderr)
    return config


def cmd_gen_data(args):
    config = load_config(args)
    out = _out_path(args.out)
    plans = corpus_plan(config.corpus, config.seed)
    n = save_dataset((synthesize_plan(p, config.corpus) for p in plans), out,
                     {"corpus": config.corpus.to_dict(), "seed": config.seed})
    print(f"wrote {n} samples to {out}")


def _corpus_features(corpus_dir, dsp: DSPConfig):
    records = read_manifest(corpus_dir)
    return build_feature_set(load_dataset(corpus_dir), dsp, [r["id"] for r in records])


def cmd_extract(args):
    dsp = load_config(args).dsp
    out = _out_path(args.out)
    if args.wav:
        matrix = extract_matrix(read_wav(args.wav).samples, dsp)
        save_features(out, matrix, dsp)
        print(f"{matrix.shape[0]} frames x {matrix.shape[1]} features -> {out}")
        return
    out.mkdir(parents=True, exist_ok=True)
    for record, sample in zip(read_manifest(args.corpus), load_dataset(args.corpus)):
        save_features(out / f"{record['id']:05d}.csv", extract_matrix(sample.audio.samples, dsp), dsp)
    print(f"features for {args.corpus} -> {out}")


def cmd_train(args):
    config = load_config(args)
    data = _corpus_features(args.corpus, config.dsp)
    model, history = train(data, config.arch, replace(config.train, seed=config.train.seed + config.seed),
                           config.dsp)
    out = _out_path(args.out)
    save_model(out, model)
    for hist in history["branches"].values():
        for entry in hist:
            entry.pop("seconds", None)
    out.with_suffix(".train.json").write_text(json.dumps(history, indent=2, sort_keys=True))
    print(f"model ({config.arch}) -> {out}")


def cmd_eval(args):
    config = load_config(args)
    if args.model:
        model = load_model(args.model)
        data = _corpus_features(args.corpus, model.dsp)
        report = {"schema": "drowsense.report/1", "meta": {}, "config": config.to_dict(),
                  "dsp_fingerprint": model.dsp.fingerprint(),
                  "results": summarise(evaluate(model, data, config.threshold, config.cooldown))}
        report["config"]["arch"] = model.arch
    else:
        report, model = run_experiment(config)
        if args.save_model:
            save_model(_out_path(args.save_model), model)
    print(report_table(report))
    if args.out:
        print(f"report -> {write_report(report, _out_path(args.out))}")


def cmd_detect(args):
    model = load_model(args.model)
    state = det.StreamState(model, args.threshold, args.cooldown)
    out = sys.stdout
    if args.wav:
        audio = read_wav(args.wav)
        if audio.sample_rate != model.dsp.fs:
            raise SystemExit(f"{args.wav}: {audio.sample_rate} Hz, model expects {model.dsp.fs} Hz")
        for frame in segment_frames(audio, model.dsp.frame_length):
            start = time.perf_counter()
            d = det.push_frame(state, frame)
            write_detections(out, [d])
            out.flush()
            if args.realtime:
                time.sleep(max(0.0, model.dsp.frame_length - (time.perf_counter() - start)))
    else:
        matrix, dsp = load_features(args.features)
        if dsp.fingerprint() != model.dsp.fingerprint():
            raise SystemExit("feature dump was made with a different DSP configuration than the model")
        for i, row in enumerate(matrix):
            write_detections(out, [state.push_features(i, row)])


def cmd_sweep(args):
    config = load_config(args)
    values = args.values
    if args.axis == "frame_length":
        values = [float(v) for v in values]
    elif args.axis == "per_class":
        values = [int(v) for v in values]
    rows = sweep(config, args.axis, values, _out_path(args.out))
    for row in rows:
        print(json.dumps(row, sort_keys=True))


def cmd_bench(args):
    model = load_model(args.model) if args.model else None
    if model is None:
        from .model import DrowsinessModel
        model = DrowsinessModel.initialise(args.arch or DEFAULT_ARCH)
    stats = det.realtime_benchmark(model, args.frames, seed=args.seed or 0)
    print(json.dumps(stats, indent=2))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drowsense", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, arch=False):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int)
        if arch:
            p.add_argument("--arch", choices=ARCHITECTURES)
        return p

    p = common(sub.add_parser("gen-data", help="synthesise a labelled corpus"))
    p.add_argument("--per-class", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = common(sub.add_parser("extract", help="dump phase features"))
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--corpus")
    group.add_argument("--wav")
    p.add_argument("--frame-length", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = common(sub.add_parser("train", help="train a model on a corpus"), arch=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="evaluate a model, or run a full experiment"), arch=True)
    p.add_argument("--model")
    p.add_argument("--corpus")
    p.add_argument("--per-class", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--save-model")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("detect", help="stream detections for a recording")
    p.add_argument("--model", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--wav")
    group.add_argument("--features")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--cooldown", type=float, default=5.0)
    p.add_argument("--realtime", action="store_true", help="pace replay at the frame rate")
    p.set_defaults(func=cmd_detect)

    p = common(sub.add_parser("sweep", help="one experiment per value along a study axis"), arch=True)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", nargs="+", required=True)
    p.add_argument("--per-class", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="per-frame processing time")
    p.add_argument("--model")
    p.add_argument("--arch", choices=ARCHITECTURES)
    p.add_argument("--frames", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.command == "eval" and bool(args.model) != bool(args.corpus):
        parser.error("eval needs both --model and --corpus, or neither (full experiment)")
    try:
        args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
