"""Held-out-participant comparison of every model on synthetic studies.

    python demos/synthetic_benchmark.py [--seeds 3] [--jobs 1]
"""
import argparse
import time

import numpy as np

from trusttransfer.data import SyntheticConfig, generate_synthetic
from trusttransfer.evaluation import make_folds_e1, run_experiment
from trusttransfer.models import MODEL_NAMES
from trusttransfer.training import TrainConfig


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    rows = []
    for seed in range(args.seeds):
        start = time.perf_counter()
        ds = generate_synthetic(SyntheticConfig(seed=seed))
        summary = run_experiment(MODEL_NAMES, ds, make_folds_e1(ds, seed), TrainConfig(seed=seed), jobs=args.jobs).summary()
        rows.append([[summary[m][k] for k in ("nll", "mae", "mae_dfb")] for m in MODEL_NAMES])
        print(f"seed {seed} done in {time.perf_counter() - start:.0f} s")

    table = np.mean(rows, axis=0)
    print("\nmodel   NLL     MAE     MAE DfB")
    for m, (n, a, d) in sorted(zip(MODEL_NAMES, table), key=lambda r: r[1][1]):
        print(f"{m:6s}  {n:.3f}   {a:.3f}   {d:.3f}")


if __name__ == "__main__":
    main()
