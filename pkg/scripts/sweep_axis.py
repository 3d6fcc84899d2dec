#!/usr/bin/env python3
"""One experiment per setting along a study axis (frame length, architecture or corpus size).

Examples:
  scripts/sweep_axis.py frame_length 0.15 0.2 0.25 0.3 0.4 --per-class 200
  scripts/sweep_axis.py arch 2-LSTM-DNN 3-LSTM-DNN 2-2-LSTM-DNN 2-3-LSTM-DNN 3-3-LSTM-DNN
  scripts/sweep_axis.py per_class 100 200 400 600
"""

import argparse
import json
import logging
from dataclasses import replace

from drowsense.experiment import SWEEP_AXES, ExperimentConfig, sweep


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("axis", choices=SWEEP_AXES)
    parser.add_argument("values", nargs="+")
    parser.add_argument("--per-class", type=int, default=200)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out", default=None)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = ExperimentConfig()
    counts = {k: args.per_class for k in base.corpus.counts}
    train = base.train if args.epochs is None else replace(base.train, epochs=args.epochs)
    config = replace(base, seed=args.seed, train=train, corpus=replace(base.corpus, counts=counts))
    cast = {"frame_length": float, "per_class": int, "arch": str}[args.axis]
    rows = sweep(config, args.axis, [cast(v) for v in args.values], args.out or f"runs/sweep_{args.axis}")
    for row in rows:
        print(json.dumps(row, sort_keys=True))


if __name__ == "__main__":
    main()
