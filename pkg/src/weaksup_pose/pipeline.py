"""Dataset synthesis, evaluation and the four-way ablation, shared by the CLI and scripts."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import DegenerateScene, InvalidConfig, NoVisibleKeypoints
from .fusion import HeatmapOracleConfig
from .labelgen import LabelGenConfig
from .losses import LossConfig
from .metrics import EvalReport, OksConfig, evaluate, make_sample_3d
from .pointnet import PointNetParams, TrainConfig, predict, train
from .synth import POSE_FAMILIES, Scene, SynthConfig, make_rng, make_scene

log = logging.getLogger(__name__)

# row order: Reg; Reg+Seg; Reg+Cam; Reg+Seg+Cam
ABLATIONS = {
    "lidar_only": dict(use_camera=False, seg=False),
    "lidar_seg": dict(use_camera=False, seg=True),
    "fusion": dict(use_camera=True, seg=False),
    "fusion_seg": dict(use_camera=True, seg=True),
}

MAX_ATTEMPTS = 50


def ablation_config(name: str, base: TrainConfig, loss_config: LossConfig) -> TrainConfig:
    if name not in ABLATIONS:
        raise InvalidConfig(f"unknown ablation {name!r}")
    a = ABLATIONS[name]
    lam = base.lambda_ if base.lambda_ is not None else loss_config.lambda_
    return replace(base, use_camera=a["use_camera"], lambda_=lam if a["seg"] else 0.0)


@dataclass
class DatasetSpec:
    n_scenes: int
    seed: int = 0
    pose_family: str = "mixed"
    occlusion_rate: float = 0.0
    base: SynthConfig = SynthConfig()

    def __post_init__(self):
        if self.n_scenes < 0:
            raise InvalidConfig("n_scenes must be non-negative")
        if not 0 <= self.occlusion_rate <= 1:
            raise InvalidConfig("occlusion_rate must lie in [0, 1]")
        if self.pose_family != "mixed" and self.pose_family not in POSE_FAMILIES:
            raise InvalidConfig(f"unknown pose family {self.pose_family!r}")


def synth_one(spec: DatasetSpec, index: int) -> tuple[Scene, int]:
    """Scene ``index`` of the dataset and the number of rejected draws."""
    for attempt in range(MAX_ATTEMPTS):
        rng = make_rng(spec.seed, 50, index, attempt)
        family = spec.pose_family
        if family == "mixed":
            family = POSE_FAMILIES[int(rng.integers(len(POSE_FAMILIES)))]
        occluded = bool(rng.uniform() < spec.occlusion_rate)
        cfg = replace(spec.base, rng_seed=int(rng.integers(2**63)), occlude_legs=occluded)
        try:
            return make_scene(cfg, family, scene_id=f"scene_{index:06d}"), attempt
        except DegenerateScene as e:
            log.debug("scene %d attempt %d rejected: %s", index, attempt, e)
    raise DegenerateScene(f"scene {index}: {MAX_ATTEMPTS} consecutive degenerate draws")


def make_dataset(spec: DatasetSpec, workers: int = 1) -> tuple[list, int]:
    """All scenes of a dataset plus the total count of rejected draws."""
    if workers > 1 and spec.n_scenes > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(lambda i: synth_one(spec, i), range(spec.n_scenes)))
    else:
        results = [synth_one(spec, i) for i in range(spec.n_scenes)]
    return [s for s, _ in results], sum(r for _, r in results)


def eval_samples(params: PointNetParams, scenes: list, config: TrainConfig,
                 fusion_config: HeatmapOracleConfig, oks_config: OksConfig = OksConfig()):
    samples, cams, skipped = [], [], 0
    for i, sc in enumerate(scenes):
        if sc.keypoints_3d_gt is None or not np.any(sc.visibility):
            skipped += 1
            continue
        pred = predict(params, sc, config, fusion_config, seed=i)
        samples.append(make_sample_3d(pred, sc.keypoints_3d_gt, sc.visibility, oks_config))
        cams.append(sc.camera)
    return samples, cams, skipped


def evaluate_params(params: PointNetParams, scenes: list, config: TrainConfig,
                    fusion_config: HeatmapOracleConfig = HeatmapOracleConfig(),
                    oks_config: OksConfig = OksConfig()) -> EvalReport:
    samples, cams, skipped = eval_samples(params, scenes, config, fusion_config, oks_config)
    if not samples:
        raise NoVisibleKeypoints("no scene has visible ground-truth keypoints")
    kept_s, kept_c = [], []
    for s, c in zip(samples, cams):
        # predictions behind the camera cannot be scored in 2D
        if np.all(c.to_camera(s.pred[s.visibility > 0])[:, 2] > 1e-6):
            kept_s.append(s)
            kept_c.append(c)
        else:
            skipped += 1
    return evaluate(kept_s, kept_c, oks_config, n_skipped=skipped)


def run_ablation(train_scenes: list, eval_scenes: list, base: TrainConfig,
                 loss_config: LossConfig = LossConfig(),
                 labelgen_config: LabelGenConfig = LabelGenConfig(),
                 fusion_config: HeatmapOracleConfig = HeatmapOracleConfig(),
                 names=tuple(ABLATIONS), labels: Optional[list] = None) -> list[dict]:
    """Train and evaluate each configuration with shared seeds; failed rows carry an error."""
    rows = []
    for name in names:
        cfg = ablation_config(name, base, loss_config)
        try:
            params, runlog = train(train_scenes, cfg, loss_config, labelgen_config,
                                   fusion_config, labels=labels)
            rep = evaluate_params(params, eval_scenes, cfg, fusion_config)
            rows.append({"config": name, "oks_3d": rep.oks_acc_3d, "mpjpe_m": rep.mpjpe_m,
                         "oks_2d": rep.oks_acc_2d, "final_loss": float(np.mean(runlog.column("L")[-50:])),
                         "error": None})
        except Exception as e:  # a failed row must not lose the others
            log.error("ablation %s failed: %s", name, e)
            rows.append({"config": name, "oks_3d": None, "mpjpe_m": None, "oks_2d": None,
                         "final_loss": None, "error": f"{type(e).__name__}: {e}"})
    return rows
