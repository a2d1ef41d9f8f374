#!/usr/bin/env python3
"""Flat-minima comparison between SAM-trained and plain-SGD weights.

Loads two checkpoints (same architecture), measures the sharpness proxy
(max loss rise over random rho-ball directions) and the loss range of a 2-D
landscape grid near the center, on the same dataset and loss for both.

Usage:
  python scripts/flatness_report.py --sam CKPT --sgd CKPT --data DIR [--rho 0.05]
"""

import argparse
import json
import sys

from mambaseg.landscape import evaluate_grid, sample_directions, sharpness_proxy
from mambaseg.synthdata import read_dataset
from mambaseg.training import dataset_loss, load_trained


def analyze(checkpoint: str, samples, rho: float, steps: int, extent: float, seed: int):
    net, ua_state, cfg, _ = load_trained(checkpoint)
    params = dict(net.params())
    loss_fn = lambda: dataset_loss(net, samples, cfg.loss.mode, ua_state, cfg.loss.gamma)
    sharp = sharpness_proxy(params, loss_fn, rho=rho, n_directions=32, seed=seed)
    d1, d2 = sample_directions(params, seed)
    grid = evaluate_grid(params, d1, d2, extent=extent, steps=steps, loss_fn=loss_fn,
                         direction_seed=seed)
    return {
        "checkpoint": checkpoint,
        "sharpness_proxy": sharp,
        "grid_range_r025": grid.range_within_radius(0.25),
        "center_loss": grid.center_loss,
    }


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sam", required=True, help="checkpoint trained with SAM")
    ap.add_argument("--sgd", required=True, help="checkpoint trained without SAM")
    ap.add_argument("--data", required=True)
    ap.add_argument("--rho", type=float, default=0.05)
    ap.add_argument("--steps", type=int, default=9)
    ap.add_argument("--extent", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    samples = read_dataset(args.data)
    report = {
        "sam": analyze(args.sam, samples, args.rho, args.steps, args.extent, args.seed),
        "sgd": analyze(args.sgd, samples, args.rho, args.steps, args.extent, args.seed),
    }
    report["sam_is_flatter"] = (
        report["sam"]["sharpness_proxy"] < report["sgd"]["sharpness_proxy"]
        and report["sam"]["grid_range_r025"] < report["sgd"]["grid_range_r025"]
    )
    print(json.dumps(report, indent=1))
    return 0 if report["sam_is_flatter"] else 1


if __name__ == "__main__":
    sys.exit(main())
