#!/usr/bin/env python3
"""Hyperparameter grid demo: sweep (d_h, k) on a synthetic corpus.

Trains every cell of the grid with a derived per-cell seed, writes each
cell's artifacts, and prints the validation-selected setting.

Example:
    python3 scripts/run_grid.py --out /tmp/grid --grid 4 8 --epochs 30
"""

import argparse
import logging
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from latefuse.experiment import RunConfig, grid_run
from latefuse.pipeline import read_events, read_labels, run_ingest
from latefuse.synth import SynthConfig, generate


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", required=True)
    p.add_argument("--head", choices=("fc", "fm", "mvm"), default="mvm")
    p.add_argument("--task", choices=("hdrs", "ymrs"), default="hdrs")
    p.add_argument("--grid", type=int, nargs="+", default=[4, 8, 16])
    p.add_argument("--users", type=int, default=6)
    p.add_argument("--sessions", type=int, default=30)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    return p.parse_args()


def main():
    logging.basicConfig(level=logging.WARNING)
    args = parse_args()
    os.makedirs(args.out, exist_ok=True)

    synth = SynthConfig(n_users=args.users, sessions_per_user=args.sessions,
                        seed=args.seed, mean_len_alph=20, mean_len_special=14,
                        mean_len_accel=40, len_floor_alph=12,
                        len_floor_special=12, len_floor_accel=12)
    events_path = os.path.join(args.out, "events.csv")
    labels_path = os.path.join(args.out, "labels.csv")
    generate(synth, events_path, labels_path)
    result = run_ingest(read_events(events_path), read_labels(labels_path))
    print(f"corpus: {result.counts['samples']} samples")

    base = RunConfig(head=args.head, task=args.task, epochs=args.epochs,
                     batch_size=256, learning_rate=0.002, seed=args.seed)
    summary = grid_run(result.samples, base, args.out, grid=tuple(args.grid))
    for cell in summary["cells"]:
        metrics = " ".join(f"{m}={v:.4f}" for m, v in cell["final"].items()
                           if v is not None)
        print(f"d_h={cell['d_h']:>2} k={cell['k']:>2}  {metrics}")
    sel = summary["selected"]
    print(f"selected: d_h={sel['d_h']} k={sel['k']} -> "
          f"{os.path.join(args.out, sel['dir'])}")


if __name__ == "__main__":
    main()
