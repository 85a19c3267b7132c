"""Training losses with analytic gradients.

* weighted Huber regression loss on pseudo 3D keypoints,
* visibility-gated weighted binary cross-entropy for the pointwise branch,
  written as a negative log-likelihood so that it is minimised,
* their weighted sum, and
* the heatmap mean-squared error used to score camera heatmaps.

Both the regression and segmentation losses divide by K = 13 regardless of how
many keypoints are visible.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import K
from .errors import InvalidConfig, ShapeMismatch

SCORE_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    huber_delta: float = 1.0
    scale_factors: tuple = field(default_factory=lambda: (0.1,) * K)
    w_pos: float = 1.0
    w_neg: float = 0.1
    lambda_: float = 0.1

    def __post_init__(self):
        s = tuple(float(x) for x in np.broadcast_to(np.asarray(self.scale_factors, dtype=float), (K,)))
        object.__setattr__(self, "scale_factors", s)
        if not self.huber_delta > 0:
            raise InvalidConfig("huber_delta must be positive")
        if min(s) <= 0:
            raise InvalidConfig("scale factors must be positive")
        if not (self.w_pos > 0 and self.w_neg > 0):
            raise InvalidConfig("class weights must be positive")
        if not self.lambda_ >= 0:
            raise InvalidConfig("lambda must be non-negative")


def huber(x, delta: float = 1.0) -> np.ndarray:
    a = np.abs(x)
    return np.where(a <= delta, 0.5 * x * x, delta * (a - 0.5 * delta))


def huber_grad(x, delta: float = 1.0) -> np.ndarray:
    return np.where(np.abs(x) <= delta, x, delta * np.sign(x))


def weighted_huber(pred, y_tilde, reliability, visibility,
                   config: LossConfig = LossConfig()) -> tuple[float, np.ndarray]:
    """Return ``(L_reg, dL_reg/dpred)`` for a (13, 3) prediction."""
    pred = np.asarray(pred, dtype=float).reshape(K, 3)
    s = np.asarray(config.scale_factors)[:, None]
    x = (pred - np.asarray(y_tilde, dtype=float).reshape(K, 3)) / s
    w = (np.asarray(visibility, dtype=float) * np.asarray(reliability, dtype=float))[:, None]
    # keep gated rows out of the arithmetic so sentinel labels cannot leak nan/inf
    x = np.where(w > 0, x, 0.0)
    value = float(np.sum(w * huber(x, config.huber_delta))) / K
    grad = w * huber_grad(x, config.huber_delta) / s / K
    return value, grad


def regression_loss(pred, labels, config: LossConfig = LossConfig()) -> tuple[float, np.ndarray]:
    """:func:`weighted_huber` against a :class:`PseudoLabels`."""
    return weighted_huber(pred, labels.y_tilde, labels.reliability, labels.visibility, config)


def segmentation_loss(scores, labels, visibility,
                      config: LossConfig = LossConfig()) -> tuple[float, np.ndarray]:
    """Return ``(L_seg, dL_seg/dscores)`` for (N, 13) probabilities.

    Scores are clamped to ``[eps, 1 - eps]``; the gradient is zero where the
    clamp is active.
    """
    p_raw = np.asarray(scores, dtype=float)
    l = np.asarray(labels, dtype=float)
    if p_raw.shape != l.shape:
        raise ShapeMismatch(f"scores {p_raw.shape} vs labels {l.shape}")
    v = np.asarray(visibility, dtype=float).reshape(1, K)
    p = np.clip(p_raw, SCORE_EPS, 1 - SCORE_EPS)
    nll = -config.w_pos * l * np.log(p) - config.w_neg * (1 - l) * np.log1p(-p)
    value = float(np.sum(v * nll)) / K
    grad = v * (-config.w_pos * l / p + config.w_neg * (1 - l) / (1 - p)) / K
    grad[(p_raw < SCORE_EPS) | (p_raw > 1 - SCORE_EPS)] = 0.0
    return value, grad


def combined_loss(reg: float, seg: float, lambda_: float) -> float:
    return reg + lambda_ * seg


def heatmap_mse_loss(pred, gt, visibility) -> float:
    p = getattr(pred, "grid", pred)
    g = getattr(gt, "grid", gt)
    p, g = np.asarray(p, dtype=float), np.asarray(g, dtype=float)
    if p.shape != g.shape:
        raise ShapeMismatch(f"pred {p.shape} vs gt {g.shape}")
    v = np.asarray(visibility, dtype=float).reshape(1, 1, -1)
    return float(np.sum(v * (p - g) ** 2)) / p.size
