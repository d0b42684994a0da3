"""How one observed success or failure moves trust across the task space.

Trains POGP on a synthetic study, then prints predicted trust on every task
before and after watching the robot on task A1. Compare the planted truth
(generator competence, mapped to [0, 1]) in the last column.

    python demos/transfer_walkthrough.py [--seed 0]
"""
import argparse

import numpy as np

from trusttransfer.data import SyntheticConfig, build_batch, generate_synthetic, synthetic_world
from trusttransfer.models import ModelSpec, participant_trust, unpack
from trusttransfer.training import TrainConfig, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--outcome", type=float, default=1.0)
    args = ap.parse_args()

    world = synthetic_world(SyntheticConfig(seed=args.seed))
    spec = ModelSpec("pogp")
    result = train(spec, build_batch(generate_synthetic(world=world)), TrainConfig(seed=args.seed))
    model = unpack(spec, result.params)
    print(f"trained POGP, best epoch {result.best_epoch}")

    ids = [t.id for t in world.catalog]
    X = np.array([world.features[i] for i in ids])
    o = ids.index("A1")
    before, after = np.asarray(participant_trust(spec, model, X[o:o + 1], np.array([args.outcome]), X))
    mean_a = float(np.mean(world.dispositions))
    truth = 1 / (1 + np.exp(-(mean_a + world.cfg.difficulty_effect * world.positions[:, 1] + world.shift(o, args.outcome))))

    print(f"\nobserved A1 with outcome {args.outcome:+.0f}\n")
    print("task  difficulty  before  after   change  planted")
    for i, t in enumerate(world.catalog):
        mark = "*" if i == o else " "
        print(f"{t.id:4s}{mark} {t.difficulty:10s}  {before[i]:.3f}   {after[i]:.3f}   {after[i] - before[i]:+.3f}  {truth[i]:.3f}")


if __name__ == "__main__":
    main()
