"""JSON Schemas (draft 2020-12) for every JSON artifact the CLI writes."""

_num = {"type": "number"}
_nullable_num = {"type": ["number", "null"]}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}
_k13 = lambda item: {"type": "array", "items": item, "minItems": 13, "maxItems": 13}  # noqa: E731
_flag = {"type": "integer", "enum": [0, 1]}

CAMERA = {
    "type": "object",
    "required": ["fx", "fy", "cx", "cy", "rotation", "translation", "width", "height"],
    "properties": {
        "fx": _num, "fy": _num, "cx": _num, "cy": _num,
        "rotation": {"type": "array", "items": _num, "minItems": 9, "maxItems": 9},
        "translation": _vec3,
        "width": {"type": "integer", "minimum": 1},
        "height": {"type": "integer", "minimum": 1},
    },
}

SCENE = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["scene_id", "camera", "points", "keypoints_2d", "keypoints_3d_gt"],
    "additionalProperties": False,
    "properties": {
        "scene_id": {"type": "string"},
        "camera": CAMERA,
        "points": {"type": "array",
                   "items": {"type": "array", "items": _num, "minItems": 6, "maxItems": 6}},
        "keypoints_2d": _k13({"type": "array", "prefixItems": [_num, _num, _flag],
                              "minItems": 3, "maxItems": 3}),
        "keypoints_3d_gt": {"oneOf": [{"type": "null"}, _k13(_vec3)]},
    },
}

LABELS = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["scene_id", "y_tilde", "reliability", "visibility", "pointwise"],
    "additionalProperties": False,
    "properties": {
        "scene_id": {"type": "string"},
        "y_tilde": _k13(_vec3),
        "reliability": _k13({"type": "number", "minimum": 0, "maximum": 1}),
        "visibility": _k13(_flag),
        "pointwise": {
            "type": "object",
            "required": ["shape", "runs"],
            "properties": {
                "shape": {"type": "array", "prefixItems": [{"type": "integer", "minimum": 0},
                                                           {"const": 13}],
                          "minItems": 2, "maxItems": 2},
                "runs": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            },
        },
    },
}

QUALITY_REPORT = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["n_scenes", "n_labelled", "n_skipped", "skipped", "mean_error_m",
                 "max_error_m", "per_keypoint_mean_error_m", "scenes"],
    "properties": {
        "n_scenes": {"type": "integer"},
        "n_labelled": {"type": "integer"},
        "n_skipped": {"type": "integer"},
        "skipped": {"type": "array", "items": {"type": "object"}},
        "mean_error_m": _nullable_num,
        "max_error_m": _nullable_num,
        "per_keypoint_mean_error_m": {"type": "object", "additionalProperties": _nullable_num},
        "scenes": {"type": "object"},
    },
}

_keypoint_row = {
    "type": "object",
    "required": ["oks_3d", "oks_2d", "acc_3d", "acc_2d", "count"],
    "properties": {"oks_3d": _nullable_num, "oks_2d": _nullable_num, "acc_3d": _nullable_num,
                   "acc_2d": _nullable_num, "count": {"type": "integer", "minimum": 0}},
}

EVAL_REPORT = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["overall", "per_keypoint", "n_samples", "n_skipped"],
    "properties": {
        "overall": {
            "type": "object",
            "required": ["oks_acc", "per_threshold", "mpjpe_m", "oks_acc_2d", "per_threshold_2d"],
            "properties": {
                "oks_acc": {"type": "number", "minimum": 0, "maximum": 1},
                "oks_acc_2d": {"type": "number", "minimum": 0, "maximum": 1},
                "mpjpe_m": {"type": "number", "minimum": 0},
                "per_threshold": {"type": "array", "items": _num, "minItems": 10, "maxItems": 10},
                "per_threshold_2d": {"type": "array", "items": _num, "minItems": 10, "maxItems": 10},
            },
        },
        "per_keypoint": {"type": "object", "additionalProperties": _keypoint_row,
                         "minProperties": 13, "maxProperties": 13},
        "n_samples": {"type": "integer", "minimum": 1},
        "n_skipped": {"type": "integer", "minimum": 0},
    },
}

ABLATION_TABLE = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["rows"],
    "properties": {
        "rows": {
            "type": "array", "minItems": 4, "maxItems": 4,
            "items": {
                "type": "object",
                "required": ["config", "oks_3d", "mpjpe_m", "oks_2d", "final_loss", "error"],
                "properties": {
                    "config": {"enum": ["lidar_only", "lidar_seg", "fusion", "fusion_seg"]},
                    "oks_3d": _nullable_num, "mpjpe_m": _nullable_num,
                    "oks_2d": _nullable_num, "final_loss": _nullable_num,
                    "error": {"type": ["string", "null"]},
                },
            },
        },
    },
}

MANIFEST = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["tool", "version", "command", "seed", "config", "artifacts", "timings"],
    "properties": {
        "tool": {"const": "weaksup-pose"},
        "version": {"type": "string"},
        "command": {"type": "string"},
        "seed": {"type": ["integer", "null"]},
        "config": {"type": "object"},
        "artifacts": {"type": "array", "items": {"type": "string"}},
        "timings": {"type": "object", "additionalProperties": _num},
        "counts": {"type": "object"},
    },
}
