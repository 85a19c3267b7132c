#!/usr/bin/env python3
"""Shared-seed ablation on half-occluded scenes with corrupted 2D heatmaps.

For each seed: train lidar_only, fusion and fusion_seg on 100 scenes
(50% occluded; heatmap dropout 0.1, jitter 2 cells), evaluate on 50 fresh
scenes, and check MPJPE(fusion_seg) <= MPJPE(fusion) <= MPJPE(lidar_only)
(0.01 m slack each) with OKS/ACC@3D in the reverse order.

    python3 scripts/ablation_direction.py --seeds 0 1 2 3 4 --out ablation_direction.json
"""
import argparse
import json
import time

from weaksup_pose.fusion import Corruption, HeatmapOracleConfig
from weaksup_pose.pipeline import ABLATIONS, DatasetSpec, make_dataset, run_ablation
from weaksup_pose.pointnet import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--n-train", type=int, default=100)
    ap.add_argument("--n-eval", type=int, default=50)
    ap.add_argument("--steps", type=int, default=800)
    ap.add_argument("--configs", nargs="+", choices=list(ABLATIONS),
                    default=["lidar_only", "fusion", "fusion_seg"])
    ap.add_argument("--slack", type=float, default=0.01)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    table = []
    for seed in args.seeds:
        t0 = time.perf_counter()
        tr, _ = make_dataset(DatasetSpec(args.n_train, seed=seed, occlusion_rate=0.5))
        te, _ = make_dataset(DatasetSpec(args.n_eval, seed=seed + 1000, occlusion_rate=0.5))
        fusion = HeatmapOracleConfig(corruption=Corruption(dropout_prob=0.1, jitter_sigma=2.0, seed=seed))
        rows = run_ablation(tr, te, TrainConfig(total_steps=args.steps, rng_seed=seed),
                            fusion_config=fusion, names=tuple(args.configs))
        by = {r["config"]: r for r in rows}
        entry = {"seed": seed, "rows": rows, "seconds": round(time.perf_counter() - t0, 1)}
        if {"lidar_only", "fusion", "fusion_seg"} <= set(by):
            lo, f, fs = by["lidar_only"], by["fusion"], by["fusion_seg"]
            entry["mpjpe_ordered"] = (fs["mpjpe_m"] <= f["mpjpe_m"] + args.slack
                                      and f["mpjpe_m"] <= lo["mpjpe_m"] + args.slack)
            entry["oks_ordered"] = fs["oks_3d"] >= f["oks_3d"] >= lo["oks_3d"]
        table.append(entry)
        print(f"seed {seed}: " + "  ".join(f"{r['config']} MPJPE {r['mpjpe_m']:.4f} OKS3D {r['oks_3d']:.3f}"
                                           for r in rows)
              + f"  mpjpe_ordered={entry.get('mpjpe_ordered')} oks_ordered={entry.get('oks_ordered')}",
              flush=True)
    n = sum(bool(e.get("mpjpe_ordered") and e.get("oks_ordered")) for e in table)
    print(f"ordering holds in {n}/{len(table)} seeds")
    if args.out:
        with open(args.out, "w") as f:
            json.dump({"seeds": table, "ordered_seeds": n}, f, indent=2)


if __name__ == "__main__":
    main()
