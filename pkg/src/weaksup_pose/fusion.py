"""Camera heatmaps and their fusion onto the point cloud.

The camera network is replaced by an oracle that renders Gaussian peaks at
the annotated 2D keypoints, optionally corrupted (channel dropout, jittered
centers) to imitate an imperfect detector. Heatmaps are stored as
``(H', W', K)`` arrays indexed ``[n, m, k]`` with ``m`` along the width.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import K
from .errors import InvalidConfig
from .geometry import CameraModel, round_half_away
from .synth import Scene, make_rng


@dataclass(frozen=True)
class Corruption:
    dropout_prob: float = 0.0
    jitter_sigma: float = 0.0  # heatmap grid cells
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.dropout_prob <= 1:
            raise InvalidConfig("dropout_prob must lie in [0, 1]")
        if not self.jitter_sigma >= 0:
            raise InvalidConfig("jitter_sigma must be non-negative")


@dataclass(frozen=True)
class HeatmapOracleConfig:
    sigma_render: float = 2.0
    smooth_kernel_size: int = 7
    smooth_sigma: float = 3.0
    grid: tuple = (64, 64)  # (H', W')
    corruption: Optional[Corruption] = None

    def __post_init__(self):
        if self.smooth_kernel_size < 1 or self.smooth_kernel_size % 2 == 0:
            raise InvalidConfig("smooth_kernel_size must be odd and >= 1")
        if not (self.sigma_render > 0 and self.smooth_sigma > 0):
            raise InvalidConfig("sigmas must be positive")
        if min(self.grid) < 1:
            raise InvalidConfig("grid dimensions must be positive")


@dataclass
class Heatmap:
    grid: np.ndarray  # (H', W', K)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if g.ndim != 3 or g.shape[2] != K:
            raise InvalidConfig(f"heatmap must be (H', W', {K}), got {g.shape}")
        if not np.all(np.isfinite(g)) or g.min() < 0 or g.max() > 1:
            raise InvalidConfig("heatmap entries must be finite and in [0, 1]")
        self.grid = g

    @property
    def shape(self) -> tuple:
        return self.grid.shape[:2]


def _seed_for(scene_id: str) -> int:
    # stable across runs, unlike hash()
    return int.from_bytes(hashlib.sha256(scene_id.encode("utf-8")).digest()[:8], "little")


def render_gt_heatmap(keypoints_2d, visibility, cam: CameraModel, grid=(64, 64),
                      config: HeatmapOracleConfig = HeatmapOracleConfig(),
                      scene_id: str = "") -> Heatmap:
    """Gaussian peak per visible keypoint in heatmap grid coordinates."""
    hh, ww = grid
    kp = np.asarray(keypoints_2d, dtype=float).reshape(K, 2)
    centers = np.column_stack([kp[:, 0] * ww / cam.width, kp[:, 1] * hh / cam.height])
    keep = np.asarray(visibility).reshape(K) > 0
    c = config.corruption
    if c is not None:
        rng = make_rng(c.seed, _seed_for(scene_id))
        drop = rng.uniform(size=K) < c.dropout_prob
        jitter = rng.normal(0.0, 1.0, size=(K, 2)) * c.jitter_sigma
        keep = keep & ~drop
        centers = centers + jitter
    m = np.arange(ww, dtype=float)
    n = np.arange(hh, dtype=float)
    gx = np.exp(-((m[None, :] - centers[:, 0:1]) ** 2) / (2 * config.sigma_render**2))  # (K, W')
    gy = np.exp(-((n[None, :] - centers[:, 1:2]) ** 2) / (2 * config.sigma_render**2))  # (K, H')
    out = np.einsum("kn,km->nmk", gy, gx)
    out[:, :, ~keep] = 0.0
    return Heatmap(out)


def gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    r = size // 2
    x = np.arange(-r, r + 1, dtype=float)
    w = np.exp(-(x**2) / (2 * sigma**2))
    return w / w.sum()


def gaussian_kernel_2d(size: int, sigma: float) -> np.ndarray:
    w = gaussian_kernel_1d(size, sigma)
    return np.outer(w, w)


def _correlate_axis(a: np.ndarray, w: np.ndarray, axis: int) -> np.ndarray:
    r = len(w) // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r, r)
    p = np.pad(a, pad)
    out = np.zeros_like(a)
    n = a.shape[axis]
    for i, wi in enumerate(w):
        out += wi * np.take(p, np.arange(i, i + n), axis=axis)
    return out


def smooth_heatmap(h: Heatmap, kernel_size: int = 7, sigma: float = 3.0) -> Heatmap:
    """Separable normalized Gaussian blur, zero padding at the border."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise InvalidConfig("kernel_size must be odd and >= 1")
    if kernel_size == 1:
        return Heatmap(h.grid.copy())
    w = gaussian_kernel_1d(kernel_size, sigma)
    out = _correlate_axis(_correlate_axis(h.grid, w, 0), w, 1)
    assert out.max(initial=0.0) <= 1 + 1e-12
    return Heatmap(np.clip(out, 0.0, 1.0))


def oracle_heatmap(scene: Scene, config: HeatmapOracleConfig = HeatmapOracleConfig()) -> Heatmap:
    """Rendered and smoothed heatmap, the frozen camera-branch output for a scene."""
    h = render_gt_heatmap(scene.keypoints_2d, scene.visibility, scene.camera,
                          config.grid, config, scene_id=scene.scene_id)
    return smooth_heatmap(h, config.smooth_kernel_size, config.smooth_sigma)


def heatmap_indices(uv, cam: CameraModel, shape) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Grid cell ``(m, n)`` of each projection and whether it lies on the grid."""
    hh, ww = shape
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    m = round_half_away(uv[:, 0] * ww / cam.width).astype(np.int64)
    n = round_half_away(uv[:, 1] * hh / cam.height).astype(np.int64)
    inside = (m >= 0) & (m < ww) & (n >= 0) & (n < hh)
    return m, n, inside


def camera_features(h: Heatmap, uv, cam: CameraModel) -> np.ndarray:
    m, n, inside = heatmap_indices(uv, cam, h.shape)
    feats = np.zeros((len(m), K))
    feats[inside] = h.grid[n[inside], m[inside]]
    return feats


def sample_camera_features(h: Heatmap, scene: Scene) -> np.ndarray:
    """FusedCloud: ``[x, y, z | camera features]`` per point, shape (N, 3 + K)."""
    return np.hstack([scene.points, camera_features(h, scene.uv, scene.camera)])


def fuse(scene: Scene, config: HeatmapOracleConfig = HeatmapOracleConfig()) -> np.ndarray:
    return sample_camera_features(oracle_heatmap(scene, config), scene)


def write_pgm(path, channel: np.ndarray):
    """16-bit binary PGM; values in [0, 1] scaled by 65535."""
    a = np.asarray(channel, dtype=float)
    data = np.round(np.clip(a, 0, 1) * 65535).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{a.shape[1]} {a.shape[0]}\n65535\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = (int(x) for x in fields[1:])
    body = raw[pos + 1:]  # exactly one whitespace byte ends the header
    data = np.frombuffer(body, dtype=">u2" if maxval > 255 else "u1", count=w * h)
    return data.reshape(h, w).astype(float) / maxval
