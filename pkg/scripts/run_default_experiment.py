#!/usr/bin/env python3
"""Train and evaluate the default detector on a freshly synthesised corpus.

Writes report.json, report.txt, latency_cdf.csv and model.bin to --out.
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from drowsense.experiment import ExperimentConfig, report_table, run_experiment, write_report
from drowsense.storage import save_model


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--per-class", type=int, default=600)
    parser.add_argument("--arch", default="2-3-LSTM-DNN")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out", default="runs/default")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = ExperimentConfig()
    counts = {k: args.per_class for k in base.corpus.counts}
    config = replace(base, arch=args.arch, seed=args.seed, corpus=replace(base.corpus, counts=counts))
    report, model = run_experiment(config)
    out = write_report(report, args.out)
    save_model(Path(out) / "model.bin", model)
    print(report_table(report))
    print(f"seconds: {report['meta']['seconds']}")


if __name__ == "__main__":
    main()
