"""Hard-mask IoU over refinement iterations on perturbed synthetic scenes.

    python3 scripts/refinement_trend.py --trials 20 --checkpoints 0 3 10 15
"""

import argparse
import csv
import sys

import numpy as np

from handrefine.hand_model import toy_model
from handrefine.refine import RefineConfig
from handrefine.scenes import iou_trajectory, perturbed_trial


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--checkpoints", type=int, nargs="+", default=[0, 3, 10, 15])
    ap.add_argument("--pose-noise", type=float, default=0.05)
    ap.add_argument("--eta", type=float, default=0.002)
    ap.add_argument("--alpha", type=float, default=0.9)
    ap.add_argument("--reduction", choices=["mean", "sum"], default="mean")
    ap.add_argument("--csv", help="write per-trial rows here")
    args = ap.parse_args(argv)

    model = toy_model(42, 3)
    config = RefineConfig(eta=args.eta, alpha=args.alpha, reduction=args.reduction)
    checkpoints = sorted(set(args.checkpoints))
    table = []
    for seed in range(args.trials):
        trial = perturbed_trial(model, seed, size=args.size, pose_noise=args.pose_noise)
        iou, _ = iou_trajectory(model, trial, config, checkpoints=checkpoints)
        table.append([iou[c] for c in checkpoints])
        print(f"seed {seed:3d}  " + "  ".join(f"it{c}={iou[c]:.3f}" for c in checkpoints), flush=True)
    table = np.array(table)
    print("mean     " + "  ".join(f"it{c}={m:.3f}" for c, m in zip(checkpoints, table.mean(axis=0))))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seed"] + [f"iou_{c}" for c in checkpoints])
            for seed, row in enumerate(table):
                writer.writerow([seed] + [f"{v:.6f}" for v in row])
    return 0


if __name__ == "__main__":
    sys.exit(main())
