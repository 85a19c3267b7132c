"""OKS, OKS/ACC and MPJPE for single-person pose estimates.

Every prediction is paired with exactly one ground-truth pose, so accuracy is
the fraction of samples whose object OKS clears a threshold, averaged over
thresholds 0.50, 0.55, ..., 0.95. Only visible keypoints are scored.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import K, KEYPOINT_NAMES
from .errors import EmptyEvalSet, InvalidConfig, NoVisibleKeypoints
from .geometry import CameraModel, project_cloud
from .errors import NonPositiveDepth

# COCO per-keypoint sigmas; kappa = 2 * sigma
COCO_SIGMAS = {
    "nose": 0.026, "shoulder": 0.079, "elbow": 0.072, "wrist": 0.062,
    "hip": 0.107, "knee": 0.087, "ankle": 0.089,
}
DEFAULT_KAPPAS = tuple(2 * COCO_SIGMAS[n.split("_")[-1]] for n in KEYPOINT_NAMES)
DEFAULT_THRESHOLDS = tuple(t / 100 for t in range(50, 100, 5))


@dataclass(frozen=True)
class OksConfig:
    kappas: tuple = DEFAULT_KAPPAS
    epsilon: float = 1e-12
    thresholds: tuple = DEFAULT_THRESHOLDS
    min_scale_3d: float = 0.05  # m
    min_scale_2d: float = 5.0  # px

    def __post_init__(self):
        if len(self.kappas) != K or min(self.kappas) <= 0:
            raise InvalidConfig("need 13 positive kappas")
        if not self.epsilon > 0:
            raise InvalidConfig("epsilon must be positive")
        t = np.asarray(self.thresholds, dtype=float)
        if len(t) == 0 or np.any(np.diff(t) <= 0) or t[0] <= 0 or t[-1] > 1:
            raise InvalidConfig("thresholds must be strictly increasing in (0, 1]")


@dataclass
class EvalSample:
    pred: np.ndarray  # (13, D), D = 3 or 2
    gt: np.ndarray
    visibility: np.ndarray
    scale: float

    def __post_init__(self):
        self.pred = np.asarray(self.pred, dtype=float)
        self.gt = np.asarray(self.gt, dtype=float)
        self.visibility = np.asarray(self.visibility, dtype=int)
        if not self.scale > 0:
            raise InvalidConfig("object scale must be positive")

    @property
    def distances(self) -> np.ndarray:
        return np.linalg.norm(self.pred - self.gt, axis=1)


def object_scale_3d(gt, visibility, floor: float = 0.05) -> float:
    """sqrt(height extent * larger horizontal extent) of visible keypoints."""
    p = np.asarray(gt, dtype=float)[np.asarray(visibility) > 0]
    if len(p) == 0:
        return floor
    ext = p.max(axis=0) - p.min(axis=0)
    return max(float(np.sqrt(ext[2] * max(ext[0], ext[1]))), floor)


def object_scale_2d(gt_2d, visibility, floor: float = 5.0) -> float:
    """sqrt of the 2D bounding-box area of visible keypoints."""
    p = np.asarray(gt_2d, dtype=float)[np.asarray(visibility) > 0]
    if len(p) == 0:
        return floor
    ext = p.max(axis=0) - p.min(axis=0)
    return max(float(np.sqrt(ext[0] * ext[1])), floor)


def _exp_terms(sample: EvalSample, config: OksConfig) -> np.ndarray:
    k = np.asarray(config.kappas)
    d = sample.distances
    return np.exp(-(d**2) / (2 * sample.scale**2 * k**2))


def per_keypoint_oks(sample: EvalSample, k: int, config: OksConfig = OksConfig()) -> float:
    delta = float(sample.visibility[k] > 0)
    if delta == 0:
        return 0.0
    return float(_exp_terms(sample, config)[k]) * delta / (delta + config.epsilon)


def object_oks(sample: EvalSample, config: OksConfig = OksConfig()) -> float:
    vis = sample.visibility > 0
    if not vis.any():
        raise NoVisibleKeypoints("sample has no visible keypoints")
    return float(_exp_terms(sample, config)[vis].sum() / vis.sum())


def acc_at_thresholds(oks_values, thresholds) -> tuple[float, list]:
    o = np.asarray(oks_values, dtype=float)
    per = [float(np.mean(o >= t)) for t in thresholds]
    return float(np.mean(per)), per


def oks_acc(samples: list, config: OksConfig = OksConfig()) -> tuple[float, list]:
    if len(samples) == 0:
        raise EmptyEvalSet("no samples to evaluate")
    return acc_at_thresholds([object_oks(s, config) for s in samples], config.thresholds)


def mpjpe(samples: list) -> float:
    """Mean distance over all (sample, visible keypoint) pairs; no alignment."""
    total, count = 0.0, 0
    for s in samples:
        vis = s.visibility > 0
        total += float(s.distances[vis].sum())
        count += int(vis.sum())
    if count == 0:
        raise NoVisibleKeypoints("no visible keypoints in the evaluation set")
    return total / count


def project_predictions(sample: EvalSample, cam: CameraModel,
                        config: OksConfig = OksConfig()) -> EvalSample:
    """2D sample from a 3D one; invisible rows are zeroed."""
    vis = sample.visibility > 0
    pred2 = np.zeros((K, 2))
    gt2 = np.zeros((K, 2))
    idx = np.flatnonzero(vis)
    try:
        pred2[idx], _ = project_cloud(cam, sample.pred[idx])
    except NonPositiveDepth as e:
        raise NonPositiveDepth(int(idx[e.index]), e.depth) from None
    gt2[idx], _ = project_cloud(cam, sample.gt[idx])
    return EvalSample(pred2, gt2, sample.visibility.copy(),
                      object_scale_2d(gt2, sample.visibility, config.min_scale_2d))


def make_sample_3d(pred, gt, visibility, config: OksConfig = OksConfig()) -> EvalSample:
    return EvalSample(pred, gt, visibility, object_scale_3d(gt, visibility, config.min_scale_3d))


@dataclass
class EvalReport:
    oks_acc_3d: float
    per_threshold_3d: list
    mpjpe_m: float
    oks_acc_2d: float
    per_threshold_2d: list
    per_keypoint: dict = field(default_factory=dict)
    n_samples: int = 0
    n_skipped: int = 0

    def to_dict(self) -> dict:
        return {
            "overall": {
                "oks_acc": self.oks_acc_3d,
                "per_threshold": self.per_threshold_3d,
                "mpjpe_m": self.mpjpe_m,
                "oks_acc_2d": self.oks_acc_2d,
                "per_threshold_2d": self.per_threshold_2d,
            },
            "per_keypoint": self.per_keypoint,
            "n_samples": self.n_samples,
            "n_skipped": self.n_skipped,
        }


def evaluate(samples_3d: list, cameras: list, config: OksConfig = OksConfig(),
             n_skipped: int = 0) -> EvalReport:
    """Overall and per-keypoint-type metrics in 3D and after projection to 2D."""
    if not samples_3d:
        raise EmptyEvalSet("no samples to evaluate")
    samples_2d = [project_predictions(s, c, config) for s, c in zip(samples_3d, cameras)]
    acc3, per3 = oks_acc(samples_3d, config)
    acc2, per2 = oks_acc(samples_2d, config)
    table = {}
    for k, name in enumerate(KEYPOINT_NAMES):
        rows3 = [s for s in samples_3d if s.visibility[k] > 0]
        rows2 = [s for s in samples_2d if s.visibility[k] > 0]
        if not rows3:
            table[name] = {"oks_3d": None, "oks_2d": None, "acc_3d": None, "acc_2d": None, "count": 0}
            continue
        o3 = [per_keypoint_oks(s, k, config) for s in rows3]
        o2 = [per_keypoint_oks(s, k, config) for s in rows2]
        table[name] = {
            "oks_3d": float(np.mean(o3)),
            "oks_2d": float(np.mean(o2)),
            "acc_3d": acc_at_thresholds(o3, config.thresholds)[0],
            "acc_2d": acc_at_thresholds(o2, config.thresholds)[0],
            "count": len(rows3),
        }
    return EvalReport(acc3, per3, mpjpe(samples_3d), acc2, per2, table,
                      n_samples=len(samples_3d), n_skipped=n_skipped)
