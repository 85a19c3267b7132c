"""File formats: scene and label JSON, parameter binaries, run logs, configs.

JSON is written with ``repr``-exact floats, fixed key order and no
whitespace, so equal objects always serialise to equal bytes.
"""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Any

import numpy as np

from . import K
from .fusion import Corruption, HeatmapOracleConfig
from .geometry import CameraModel
from .labelgen import LabelGenConfig, PseudoLabels
from .losses import LossConfig
from .pointnet import NetConfig, PointNetParams, RunLog, TrainConfig, params_from_bytes, params_to_bytes
from .synth import Box, Scene, SynthConfig


def dumps(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def write_json(path, obj: Any):
    Path(path).write_text(dumps(obj) + "\n", encoding="utf-8")


def read_json(path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _floats(a) -> list:
    return np.asarray(a, dtype=float).tolist()


# ---------------------------------------------------------------- scenes

def scene_to_dict(scene: Scene) -> dict:
    pts = np.hstack([scene.points, scene.uv, scene.depth[:, None]]) if scene.n_points else np.zeros((0, 6))
    kp2 = np.hstack([scene.keypoints_2d, np.asarray(scene.visibility, dtype=float)[:, None]])
    kp2 = [[u, v, int(vis)] for u, v, vis in kp2.tolist()]
    return {
        "scene_id": scene.scene_id,
        "camera": scene.camera.to_dict(),
        "points": _floats(pts),
        "keypoints_2d": kp2,
        "keypoints_3d_gt": None if scene.keypoints_3d_gt is None else _floats(scene.keypoints_3d_gt),
    }


def scene_from_dict(d: dict) -> Scene:
    pts = np.asarray(d["points"], dtype=float).reshape(-1, 6)
    kp2 = np.asarray(d["keypoints_2d"], dtype=float).reshape(K, 3)
    gt = d.get("keypoints_3d_gt")
    return Scene(
        points=pts[:, :3].copy(), uv=pts[:, 3:5].copy(), depth=pts[:, 5].copy(),
        keypoints_2d=kp2[:, :2].copy(), visibility=kp2[:, 2].astype(int),
        camera=CameraModel.from_dict(d["camera"]),
        keypoints_3d_gt=None if gt is None else np.asarray(gt, dtype=float).reshape(K, 3),
        scene_id=d["scene_id"],
    )


def write_scene(path, scene: Scene):
    write_json(path, scene_to_dict(scene))


def read_scene(path) -> Scene:
    return scene_from_dict(read_json(path))


def scene_paths(directory) -> list[Path]:
    return sorted(Path(directory).glob("scene_*.json"))


# ---------------------------------------------------------------- labels

def rle_encode(bits) -> dict:
    """Row-major run lengths, alternating 0-runs and 1-runs, starting with 0s."""
    b = np.asarray(bits, dtype=np.uint8)
    flat = b.ravel()
    runs = []
    if flat.size:
        change = np.flatnonzero(np.diff(flat)) + 1
        bounds = np.concatenate([[0], change, [flat.size]])
        runs = np.diff(bounds).tolist()
        if flat[0] == 1:
            runs = [0] + runs
    return {"shape": list(b.shape), "runs": runs}


def rle_decode(d: dict) -> np.ndarray:
    shape = tuple(d["shape"])
    vals = np.arange(len(d["runs"])) % 2
    flat = np.repeat(vals.astype(np.uint8), d["runs"])
    if flat.size != int(np.prod(shape)):
        raise ValueError("run lengths do not match the bitmap shape")
    return flat.reshape(shape)


def labels_to_dict(labels: PseudoLabels, scene_id: str = "") -> dict:
    return {
        "scene_id": scene_id,
        "y_tilde": _floats(labels.y_tilde),
        "reliability": _floats(labels.reliability),
        "visibility": [int(v) for v in labels.visibility],
        "pointwise": rle_encode(labels.pointwise),
    }


def labels_from_dict(d: dict) -> PseudoLabels:
    return PseudoLabels(
        y_tilde=np.asarray(d["y_tilde"], dtype=float).reshape(K, 3),
        reliability=np.asarray(d["reliability"], dtype=float),
        pointwise=rle_decode(d["pointwise"]),
        visibility=np.asarray(d["visibility"], dtype=int),
    )


def write_labels(path, labels: PseudoLabels, scene_id: str = ""):
    write_json(path, labels_to_dict(labels, scene_id))


def read_labels(path) -> PseudoLabels:
    return labels_from_dict(read_json(path))


def label_path_for(labels_dir, scene_path) -> Path:
    return Path(labels_dir) / (Path(scene_path).stem + ".labels.json")


# ---------------------------------------------------------------- params / logs

def write_params(path, params: PointNetParams):
    Path(path).write_bytes(params_to_bytes(params))


def read_params(path) -> PointNetParams:
    return params_from_bytes(Path(path).read_bytes())


def write_runlog(path, log: RunLog):
    Path(path).write_text(log.to_csv(), encoding="utf-8")


def read_runlog(path) -> RunLog:
    return RunLog.from_csv(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------- configs

def _plain(x):
    if dataclasses.is_dataclass(x):
        return {f.name: _plain(getattr(x, f.name)) for f in dataclasses.fields(x)}
    if isinstance(x, CameraModel):
        return x.to_dict()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (tuple, list)):
        return [_plain(v) for v in x]
    return x


def config_to_dict(cfg) -> dict:
    return _plain(cfg)


def _tuples(d: dict, *keys) -> dict:
    return {k: (tuple(v) if k in keys and v is not None else v) for k, v in d.items()}


def train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    if "net" in d:
        d["net"] = NetConfig(**_tuples(d["net"], "encoder", "seg_head", "reg_head"))
    return TrainConfig(**d)


def loss_config_from_dict(d: dict) -> LossConfig:
    return LossConfig(**_tuples(d, "scale_factors"))


def labelgen_config_from_dict(d: dict) -> LabelGenConfig:
    return LabelGenConfig(**d)


def fusion_config_from_dict(d: dict) -> HeatmapOracleConfig:
    d = _tuples(d, "grid")
    if d.get("corruption") is not None:
        d["corruption"] = Corruption(**d["corruption"])
    return HeatmapOracleConfig(**d)


def synth_config_from_dict(d: dict) -> SynthConfig:
    d = _tuples(d, "distance_range")
    if d.get("occluder") is not None:
        d["occluder"] = Box(**d["occluder"])
    if "camera" in d:
        d["camera"] = CameraModel.from_dict(d["camera"])
    return SynthConfig(**d)


@dataclasses.dataclass
class PipelineConfig:
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    loss: LossConfig = dataclasses.field(default_factory=LossConfig)
    labelgen: LabelGenConfig = dataclasses.field(default_factory=LabelGenConfig)
    fusion: HeatmapOracleConfig = dataclasses.field(default_factory=HeatmapOracleConfig)

    def to_dict(self) -> dict:
        return {k: config_to_dict(getattr(self, k)) for k in ("train", "loss", "labelgen", "fusion")}

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        unknown = set(d) - {"train", "loss", "labelgen", "fusion"}
        if unknown:
            raise TypeError(f"unknown config sections {sorted(unknown)}")
        return cls(
            train=train_config_from_dict(d.get("train", {})),
            loss=loss_config_from_dict(d.get("loss", {})),
            labelgen=labelgen_config_from_dict(d.get("labelgen", {})),
            fusion=fusion_config_from_dict(d.get("fusion", {})),
        )
