#!/usr/bin/env python3
"""Train one configuration on synthetic scenes and report loss reduction and held-out MPJPE.

Defaults reproduce the training-efficacy check: fusion_seg, 200 scenes,
2000 steps, 50 held-out scenes.

    python3 scripts/train_and_eval.py --ablation fusion_seg --steps 2000
"""
import argparse
import json
import time

from weaksup_pose.losses import LossConfig
from weaksup_pose.pipeline import ABLATIONS, DatasetSpec, ablation_config, evaluate_params, make_dataset
from weaksup_pose.pointnet import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ablation", choices=list(ABLATIONS), default="fusion_seg")
    ap.add_argument("--n-train", type=int, default=200)
    ap.add_argument("--n-eval", type=int, default=50)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--occlusion-rate", type=float, default=0.0)
    args = ap.parse_args()

    tr, _ = make_dataset(DatasetSpec(args.n_train, seed=args.seed, occlusion_rate=args.occlusion_rate))
    te, _ = make_dataset(DatasetSpec(args.n_eval, seed=args.seed + 1000, occlusion_rate=args.occlusion_rate))
    loss = LossConfig()
    cfg = ablation_config(args.ablation, TrainConfig(total_steps=args.steps, learning_rate=args.lr,
                                                     rng_seed=args.seed), loss)
    t0 = time.perf_counter()
    params, log = train(tr, cfg, loss)
    elapsed = time.perf_counter() - t0
    L = log.column("L")
    rep = evaluate_params(params, te, cfg)
    print(json.dumps({
        "config": args.ablation, "steps": args.steps, "train_s": round(elapsed, 1),
        "L_first50": round(float(L[:50].mean()), 4), "L_last50": round(float(L[-50:].mean()), 4),
        "heldout_mpjpe_m": round(rep.mpjpe_m, 4), "heldout_oks_acc_3d": round(rep.oks_acc_3d, 4),
        "heldout_oks_acc_2d": round(rep.oks_acc_2d, 4),
        "per_keypoint_oks_3d": {k: (None if v["oks_3d"] is None else round(v["oks_3d"], 3))
                                for k, v in rep.per_keypoint.items()},
    }, indent=2))


if __name__ == "__main__":
    main()
