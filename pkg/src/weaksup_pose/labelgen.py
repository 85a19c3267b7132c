"""Pseudo 3D keypoint labels, reliabilities and pointwise labels.

Every visible 2D keypoint gets a 3D target that is a softmax-weighted
average of the 3D points, weighted by how close each point projects to the
keypoint in the image. Points within a fixed pixel radius of a keypoint are
positives for that keypoint's segmentation channel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import K
from .errors import AllInvisible, EmptyCloud, InvalidConfig, MissingGroundTruth
from .synth import Scene


@dataclass(frozen=True)
class LabelGenConfig:
    temperature: float = 0.05  # 1/px^2
    reliability_temperature: float = 0.01  # 1/px^2
    positive_radius: float = 5.0  # px
    min_neighbor_px: float = 10.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise InvalidConfig("temperature must be positive")
        if not self.reliability_temperature > 0:
            raise InvalidConfig("reliability_temperature must be positive")
        if not self.positive_radius > 0:
            raise InvalidConfig("positive_radius must be positive")


@dataclass
class PseudoLabels:
    y_tilde: np.ndarray  # (13, 3), zero rows for invisible keypoints
    reliability: np.ndarray  # (13,), zero for invisible keypoints
    pointwise: np.ndarray  # (N, 13) uint8
    visibility: np.ndarray  # (13,) int


def _check(scene: Scene):
    if scene.n_points == 0:
        raise EmptyCloud("scene has no points")


def squared_pixel_distances(uv, keypoints_2d) -> np.ndarray:
    """(N, 13) squared image-plane distances."""
    diff = np.asarray(uv, dtype=float)[:, None, :] - np.asarray(keypoints_2d, dtype=float)[None, :, :]
    return np.einsum("nkc,nkc->nk", diff, diff)


def softmax_weights(sq_dist, temperature: float) -> np.ndarray:
    """Column-wise softmax of ``-temperature * sq_dist`` over points."""
    d2 = np.asarray(sq_dist, dtype=float)
    # shift before scaling: differences of nearby large distances stay exact
    logits = -temperature * (d2 - d2.min(axis=0, keepdims=True))
    w = np.exp(logits)
    return w / w.sum(axis=0, keepdims=True)


def pointwise_labels(scene: Scene, config: LabelGenConfig) -> np.ndarray:
    _check(scene)
    d2 = squared_pixel_distances(scene.uv, scene.keypoints_2d)
    # compare distances, not squares, so the boundary matches the "<= r" rule exactly
    inside = np.sqrt(d2) <= config.positive_radius
    return (inside & (np.asarray(scene.visibility)[None, :] > 0)).astype(np.uint8)


def pseudo_3d_labels(scene: Scene, config: LabelGenConfig) -> PseudoLabels:
    _check(scene)
    vis = np.asarray(scene.visibility, dtype=int)
    if not vis.any():
        raise AllInvisible("every keypoint is invisible")
    d2 = squared_pixel_distances(scene.uv, scene.keypoints_2d)
    alpha = softmax_weights(d2, config.temperature)
    y = alpha.T @ scene.points
    rel = np.exp(-config.reliability_temperature * d2.min(axis=0))
    y[vis == 0] = 0.0
    rel[vis == 0] = 0.0
    return PseudoLabels(y_tilde=y, reliability=rel,
                        pointwise=pointwise_labels(scene, config), visibility=vis.copy())


@dataclass
class QualityReport:
    error_m: np.ndarray  # (13,) nan for invisible
    min_neighbor_px: np.ndarray  # (13,)
    positive_count: np.ndarray  # (13,)
    low_reliability: np.ndarray  # (13,) bool, nearest point farther than the config floor
    mean_error_m: float
    max_error_m: float

    def to_dict(self) -> dict:
        clean = lambda a: [None if not np.isfinite(x) else float(x) for x in a]  # noqa: E731
        return {
            "error_m": clean(self.error_m),
            "min_neighbor_px": clean(self.min_neighbor_px),
            "positive_count": [int(x) for x in self.positive_count],
            "low_reliability": [bool(x) for x in self.low_reliability],
            "mean_error_m": self.mean_error_m,
            "max_error_m": self.max_error_m,
        }


def label_quality_report(scene: Scene, labels: PseudoLabels,
                         config: LabelGenConfig = LabelGenConfig()) -> QualityReport:
    if scene.keypoints_3d_gt is None:
        raise MissingGroundTruth(f"scene {scene.scene_id!r} has no 3D ground truth")
    vis = labels.visibility > 0
    err = np.linalg.norm(labels.y_tilde - scene.keypoints_3d_gt, axis=1)
    err[~vis] = np.nan
    d2 = squared_pixel_distances(scene.uv, scene.keypoints_2d)
    min_px = np.sqrt(d2.min(axis=0))
    return QualityReport(
        error_m=err,
        min_neighbor_px=min_px,
        positive_count=labels.pointwise.sum(axis=0).astype(int),
        low_reliability=vis & (min_px > config.min_neighbor_px),
        mean_error_m=float(np.nanmean(err)) if vis.any() else float("nan"),
        max_error_m=float(np.nanmax(err)) if vis.any() else float("nan"),
    )
