#!/usr/bin/env python3
"""Seed-sweep summary table: error mean +/- standard error per block size.

Thin wrapper over the `repro` CLI subcommand with a generated synthetic
config, handy for a quick end-to-end check of the whole pipeline.
"""

import argparse
import os
import sys
import tempfile

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mrc.cli import cli_main


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--block-sizes", default="10,20")
    parser.add_argument("--iters", type=int, default=2000)
    parser.add_argument("--out", default="out/repro")
    args = parser.parse_args()

    config = f"""
dataset = synthetic
layers = 8,16,4
parameterization = mean_kl
budget_bits = 10
block_size = {args.block_sizes.split(',')[0]}
block_sizes = {args.block_sizes}
repro_seeds = {args.seeds}
max_iters = {args.iters}
batch_size = 64
learning_rate = 0.004
finetune_steps = 20
init_coding_log_std = -1.0
synth_points = 400
synth_classes = 4
synth_dim = 8
synth_seed = 0
output_dir = {args.out}
"""
    with tempfile.NamedTemporaryFile("w", suffix=".cfg", delete=False) as f:
        f.write(config)
        path = f.name
    try:
        code = cli_main(["repro", "--config", path])
        if code == 0:
            print(open(os.path.join(args.out, "summary.csv")).read())
        sys.exit(code)
    finally:
        os.unlink(path)


if __name__ == "__main__":
    main()
