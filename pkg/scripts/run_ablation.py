#!/usr/bin/env python3
"""Desk-scale ablation: CE-only vs uncertainty-aware vs uncertainty+SAM.

Trains the three loss modes from the same seeds on the synthetic dataset and
prints per-seed and median validation mean-DSC, mirroring the published
ablation direction. Writes one JSON summary with every number reported.

Usage: python scripts/run_ablation.py [--seeds 5] [--steps 300] [--out DIR]
"""

import argparse
import json
import os
import statistics
import sys
import time

from mambaseg.config import RunConfig
from mambaseg.training import run_training

MODES = [("ce", False), ("uncertainty", False), ("uncertainty+sam", True)]


def ablation_config(mode: str, sam: bool, seed: int, steps: int, out_dir: str) -> RunConfig:
    return RunConfig.from_dict(
        {
            "network": {
                "channels": [6, 12, 24],
                "input_shape": [64, 64],
                "deep_supervision": True,
                "n_state": 4,
            },
            "optimizer": {"lr": 5e-3, "momentum": 0.99, "sam": {"enabled": sam, "rho": 0.05}},
            "loss": {"mode": mode},
            "data": {"synth": {"n_train": 200, "n_val": 40}},
            "epochs": 3,
            "batch_size": 2,
            "max_steps": steps,
            "eval_every": 3,
            "seed": seed,
            "output_dir": os.path.join(out_dir, f"{mode.replace('+', '_')}_s{seed}"),
        }
    )


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--no-artifacts", action="store_true")
    args = ap.parse_args()

    scores: dict[str, list[float]] = {m: [] for m, _ in MODES}
    t0 = time.time()
    for seed in range(args.seeds):
        for mode, sam in MODES:
            cfg = ablation_config(mode, sam, seed, args.steps, args.out)
            t1 = time.time()
            res = run_training(cfg, write_artifacts=not args.no_artifacts)
            dsc = res.final_report.mean_dsc
            scores[mode].append(dsc)
            print(
                f"{mode:16s} seed {seed}: val mean-DSC {dsc:.4f} ({time.time() - t1:.0f}s)",
                file=sys.stderr,
            )
    medians = {m: statistics.median(v) for m, v in scores.items()}
    print(json.dumps({"per_seed": scores, "medians": medians,
                      "total_seconds": time.time() - t0}, indent=1))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump({"per_seed": scores, "medians": medians}, fh, indent=1)
    ok = (
        medians["uncertainty+sam"] >= medians["uncertainty"] - 0.005
        and medians["uncertainty"] >= medians["ce"] - 0.005
        and medians["uncertainty+sam"] >= 0.90
    )
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
