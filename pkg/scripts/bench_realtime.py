#!/usr/bin/env python3
"""Sustained streaming benchmark: per-frame time for features, both branches and fusion."""

import argparse
import json

from drowsense.detector import realtime_benchmark
from drowsense.model import ARCHITECTURES, DrowsinessModel
from drowsense.storage import load_model


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model", help="trained model file; an untrained model of --arch otherwise")
    parser.add_argument("--arch", choices=ARCHITECTURES, default="2-3-LSTM-DNN")
    parser.add_argument("--frames", type=int, default=1000)
    args = parser.parse_args()
    model = load_model(args.model) if args.model else DrowsinessModel.initialise(args.arch)
    stats = realtime_benchmark(model, args.frames)
    stats["within_budget"] = stats["p99_s"] < stats["budget_s"]
    print(json.dumps(stats, indent=2))


if __name__ == "__main__":
    main()
