#!/usr/bin/env python3
"""Reproduce the component ablation: four flag variants on the default task.

Trains baseline (mean pooling, no bottleneck), cross-attention only,
bottleneck only, and the full model — variant i seeded master + i — then
tabulates per-category accuracy, overall accuracy, and average accuracy on
the held-out split.  Artifacts (all via the standard CLI):

    <out>/dataset.jsonl               the shared dataset
    <out>/ablation.txt                fixed-width results table
    <out>/ablation.json               the same rows, machine-readable
    <out>/<variant>.ckpt              one checkpoint per variant

Reruns with the same master seed reproduce every artifact byte for byte.
"""

from __future__ import annotations

import argparse
import os

from mibvqa.cli import main
from mibvqa.training import TrainConfig


def run() -> int:
    parser = argparse.ArgumentParser(
        description="four-variant ablation on the default dataset")
    parser.add_argument("--out", default="runs/ablation",
                        help="output directory (default: runs/ablation)")
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed (default: the desk recipe's)")
    parser.add_argument("--epochs", type=int, default=None,
                        help="override the desk epoch budget (for quick runs)")
    parser.add_argument("--data", default=None,
                        help="reuse an existing dataset file instead of "
                             "generating one")
    args = parser.parse_args()

    desk = TrainConfig.desk()
    seed = desk.seed if args.seed is None else args.seed
    epochs = desk.epochs if args.epochs is None else args.epochs

    os.makedirs(args.out, exist_ok=True)
    if args.data is None:
        data_path = os.path.join(args.out, "dataset.jsonl")
        code = main(["gen-data", "--out", data_path])
        if code:
            return code
    else:
        data_path = args.data

    return main(["ablate", "--data", data_path, "--out", args.out,
                 "--seed", str(seed), "--epochs", str(epochs),
                 "--batch-size", str(desk.batch_size),
                 "--lr", repr(desk.learning_rate)])


if __name__ == "__main__":
    raise SystemExit(run())
