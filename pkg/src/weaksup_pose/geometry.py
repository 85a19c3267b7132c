"""Pinhole camera model and LiDAR-to-image projection.

Image convention used everywhere in the package: ``u`` runs along the image
width and ``v`` along the height, origin at the top-left corner, pixel
centers at integer coordinates. No lens distortion is modelled.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, NonPositiveDepth

MIN_DEPTH = 1e-6

# LiDAR frame is x forward, y left, z up; camera frame is x right, y down, z forward.
LIDAR_TO_CAMERA = np.array(
    [[0.0, -1.0, 0.0],
     [0.0, 0.0, -1.0],
     [1.0, 0.0, 0.0]]
)


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    width: int = 256
    height: int = 256

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidConfig("focal lengths must be positive")
        if not (int(self.width) > 0 and int(self.height) > 0):
            raise InvalidConfig("image size must be positive")
        if not np.allclose(R.T @ R, np.eye(3), rtol=0, atol=1e-9):
            raise InvalidConfig("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise InvalidConfig("rotation must have determinant +1")

    @property
    def center(self) -> np.ndarray:
        """Camera optical center in the LiDAR frame."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def in_image(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return (
            (uv[..., 0] >= 0) & (uv[..., 0] < self.width)
            & (uv[..., 1] >= 0) & (uv[..., 1] < self.height)
        )

    def to_dict(self) -> dict:
        return {
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "rotation": [float(x) for x in self.rotation.ravel()],
            "translation": [float(x) for x in self.translation],
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(
            fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
            rotation=np.array(d["rotation"], dtype=float).reshape(3, 3),
            translation=np.array(d["translation"], dtype=float),
            width=int(d["width"]), height=int(d["height"]),
        )

    def __eq__(self, other):
        if not isinstance(other, CameraModel):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(repr(self.to_dict()))


def default_camera(focal: float = 900.0, size: int = 256) -> CameraModel:
    """Forward-looking camera co-located with the LiDAR origin."""
    c = (size - 1) / 2.0
    return CameraModel(fx=focal, fy=focal, cx=c, cy=c,
                       rotation=LIDAR_TO_CAMERA, translation=np.zeros(3),
                       width=size, height=size)


def project(cam: CameraModel, p) -> tuple[np.ndarray, float]:
    """Project one LiDAR-frame point; returns ``((u, v), depth)``."""
    uv, depth = project_cloud(cam, np.asarray(p, dtype=float).reshape(1, 3))
    return uv[0], float(depth[0])


def project_cloud(cam: CameraModel, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`project`. Returns ``(uv[N, 2], depth[N])``.

    Raises NonPositiveDepth carrying the first offending index.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        return np.zeros((0, 2)), np.zeros(0)
    pc = cam.to_camera(points)
    z = pc[:, 2]
    bad = np.flatnonzero(~(z > MIN_DEPTH))
    if len(bad):
        i = int(bad[0])
        raise NonPositiveDepth(i, float(z[i]))
    uv = np.empty((len(points), 2))
    uv[:, 0] = cam.fx * (pc[:, 0] / z) + cam.cx
    uv[:, 1] = cam.fy * (pc[:, 1] / z) + cam.cy
    return uv, z.copy()


def backproject(cam: CameraModel, uv, depth) -> np.ndarray:
    """Inverse of :func:`project_cloud` given per-pixel depth."""
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    depth = np.asarray(depth, dtype=float).reshape(-1)
    pc = np.empty((len(uv), 3))
    pc[:, 0] = (uv[:, 0] - cam.cx) / cam.fx * depth
    pc[:, 1] = (uv[:, 1] - cam.cy) / cam.fy * depth
    pc[:, 2] = depth
    return (pc - cam.translation) @ cam.rotation


def rigid_transform(rotation, translation, points) -> np.ndarray:
    return np.asarray(points, dtype=float) @ np.asarray(rotation).T + np.asarray(translation)


def compose_extrinsics(cam: CameraModel, rotation, translation) -> CameraModel:
    """Camera seeing the world after ``x -> rotation @ x + translation``.

    Projections of transformed points through the returned camera equal
    projections of the original points through ``cam``.
    """
    rotation = np.asarray(rotation, dtype=float)
    translation = np.asarray(translation, dtype=float)
    R = cam.rotation @ rotation.T
    t = cam.translation - R @ translation
    return CameraModel(cam.fx, cam.fy, cam.cx, cam.cy, R, t, cam.width, cam.height)


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def round_half_away(x) -> np.ndarray:
    """Round half away from zero (``np.round`` rounds half to even)."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)
