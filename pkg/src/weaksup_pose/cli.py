"""``weaksup-pose`` command line: synth, labelgen, train, eval, ablation_matrix, heatmaps.

Exit codes: 0 success, 2 I/O or malformed input, 3 invalid configuration,
4 numerical divergence during training.
"""
from __future__ import annotations

import argparse
import csv
import io as _stdio
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import KEYPOINT_NAMES, __version__
from . import io
from .errors import (AllInvisible, DivergenceDetected, EmptyCloud, InvalidConfig,
                     MissingGroundTruth, NoVisibleKeypoints)
from .fusion import oracle_heatmap, write_pgm
from .labelgen import label_quality_report, pseudo_3d_labels
from .pipeline import ABLATIONS, DatasetSpec, ablation_config, evaluate_params, run_ablation, synth_one
from .pointnet import train

log = logging.getLogger("weaksup_pose")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3, 4


class InputError(Exception):
    """Unreadable or malformed input; maps to exit code 2."""


def worker_count() -> int:
    raw = os.environ.get("WEAKSUP_POSE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise InvalidConfig(f"WEAKSUP_POSE_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise InvalidConfig("WEAKSUP_POSE_THREADS must be >= 1")
    return n


def _map(fn, items):
    """Ordered map over a thread pool bounded by WEAKSUP_POSE_THREADS."""
    n = worker_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as ex:
        return list(ex.map(fn, items))


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_scenes(directory):
    d = Path(directory)
    if not d.is_dir():
        raise InputError(f"scene directory {d} does not exist")
    paths = io.scene_paths(d)

    def load(p):
        try:
            return io.read_scene(p)
        except (ValueError, KeyError, TypeError) as e:
            raise InputError(f"malformed scene file {p}: {e}") from None
    return paths, _map(load, paths)


def _load_config(path) -> io.PipelineConfig:
    if path is None:
        return io.PipelineConfig()
    try:
        d = io.read_json(path)
    except ValueError as e:
        raise InputError(f"config {path} is not JSON: {e}") from None
    if "tool" in d and "config" in d:  # a run manifest
        d = d["config"]
    d = {k: v for k, v in d.items() if k in ("train", "loss", "labelgen", "fusion")}
    try:
        return io.PipelineConfig.from_dict(d)
    except TypeError as e:
        raise InvalidConfig(f"bad config {path}: {e}") from None


def _write_manifest(out: Path, command: str, seed, config: dict, artifacts, timings, counts=None):
    manifest = {
        "tool": "weaksup-pose",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
        "artifacts": sorted(str(Path(a).relative_to(out)) for a in artifacts),
        "timings": {k: round(v, 6) for k, v in timings.items()},
        "counts": counts or {},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, allow_nan=False) + "\n")


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    t0 = time.perf_counter()
    spec = DatasetSpec(args.n_scenes, seed=args.seed, pose_family=args.pose_family,
                       occlusion_rate=args.occlusion_rate)
    out = _out_dir(args.out)
    results = _map(lambda i: synth_one(spec, i), list(range(spec.n_scenes)))
    paths = []
    for scene, _ in results:
        p = out / f"{scene.scene_id}.json"
        io.write_scene(p, scene)
        paths.append(p)
    rejected = sum(r for _, r in results)
    if rejected:
        log.info("rejected %d degenerate draws", rejected)
    config = {"dataset": {"n_scenes": spec.n_scenes, "seed": spec.seed,
                          "pose_family": spec.pose_family, "occlusion_rate": spec.occlusion_rate},
              "synth": io.config_to_dict(spec.base)}
    _write_manifest(out, "synth", args.seed, config, paths,
                    {"total_s": time.perf_counter() - t0},
                    {"scenes": len(paths), "rejected_draws": rejected})
    return EXIT_OK


# ---------------------------------------------------------------- labelgen

def cmd_labelgen(args) -> int:
    t0 = time.perf_counter()
    base = _load_config(args.config).labelgen
    overrides = {k: v for k, v in (("temperature", args.T), ("reliability_temperature", args.Tr),
                                   ("positive_radius", args.radius)) if v is not None}
    cfg = replace(base, **overrides)
    paths, scenes = _load_scenes(args.scenes)
    out = _out_dir(args.out)

    def one(item):
        path, scene = item
        try:
            labels = pseudo_3d_labels(scene, cfg)
        except (EmptyCloud, AllInvisible) as e:
            return path, scene, None, f"{type(e).__name__}: {e}"
        return path, scene, labels, None

    results = _map(one, list(zip(paths, scenes)))
    artifacts, skipped, per_scene, errs = [], [], {}, []
    for path, scene, labels, err in results:
        if labels is None:
            log.warning("skipping %s: %s", path.name, err)
            skipped.append({"scene": path.name, "reason": err})
            continue
        lp = io.label_path_for(out, path)
        io.write_labels(lp, labels, scene.scene_id)
        artifacts.append(lp)
        try:
            rep = label_quality_report(scene, labels, cfg)
        except MissingGroundTruth:
            continue
        per_scene[scene.scene_id] = rep.to_dict()
        errs.append(rep.error_m)
    if errs:
        e = np.vstack(errs)
        finite = e[np.isfinite(e)]
        ok = np.isfinite(e)
        counts = ok.sum(axis=0)
        kp_mean = np.where(ok, e, 0.0).sum(axis=0) / np.maximum(counts, 1)
        kp_mean[counts == 0] = np.nan
        mean_err = float(finite.mean()) if finite.size else None
        max_err = float(finite.max()) if finite.size else None
        per_kp = {n: (float(v) if np.isfinite(v) else None) for n, v in zip(KEYPOINT_NAMES, kp_mean)}
    else:
        mean_err = max_err = None
        per_kp = {n: None for n in KEYPOINT_NAMES}
    report = {"n_scenes": len(paths), "n_labelled": len(artifacts), "n_skipped": len(skipped),
              "skipped": skipped, "mean_error_m": mean_err, "max_error_m": max_err,
              "per_keypoint_mean_error_m": per_kp, "scenes": per_scene}
    rp = out / "quality_report.json"
    io.write_json(rp, report)
    if skipped:
        log.warning("%d scene(s) skipped", len(skipped))
    _write_manifest(out, "labelgen", None, {"labelgen": io.config_to_dict(cfg)},
                    artifacts + [rp], {"total_s": time.perf_counter() - t0},
                    {"labelled": len(artifacts), "skipped": len(skipped)})
    return EXIT_OK


# ---------------------------------------------------------------- train

def _train_config(args, cfg: io.PipelineConfig):
    t = cfg.train
    if args.steps is not None:
        t = replace(t, total_steps=args.steps)
    if args.seed is not None:
        t = replace(t, rng_seed=args.seed)
    if args.ablation is not None:
        t = ablation_config(args.ablation, t, cfg.loss)
    return replace(cfg, train=t)


def _load_labels(labels_dir, paths):
    out = []
    for p in paths:
        lp = io.label_path_for(labels_dir, p)
        if not lp.exists():
            raise InputError(f"missing label file {lp}")
        try:
            lab = io.read_labels(lp)
        except (ValueError, KeyError, TypeError) as e:
            raise InputError(f"malformed label file {lp}: {e}") from None
        out.append(lab)
    return out


class _BatchDump:
    """Per-step statistics of the camera-feature columns of every batch."""

    def __init__(self):
        self.rows = []

    def __call__(self, step, x):
        cam = np.abs(x[..., 3:])
        self.rows.append((step, float(cam.max()), int(np.count_nonzero(cam))))

    def write(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["step", "camera_abs_max", "camera_nonzero"])
            w.writerows(self.rows)


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    cfg = _train_config(args, _load_config(args.config))
    paths, scenes = _load_scenes(args.scenes)
    if not scenes:
        raise InputError(f"no scenes in {args.scenes}")
    labels = _load_labels(args.labels, paths)
    for sc, lab in zip(scenes, labels):
        if lab.pointwise.shape[0] != sc.n_points:
            raise InputError(f"labels for {sc.scene_id} do not match its point count")
    out = _out_dir(args.out)
    dump = _BatchDump() if args.debug_dump else None
    t1 = time.perf_counter()
    try:
        params, runlog = train(scenes, cfg.train, cfg.loss, cfg.labelgen, cfg.fusion,
                               labels=labels, on_batch=dump)
    except DivergenceDetected as e:
        log.error("training diverged at step %d (loss %r)", e.step, e.value)
        raise
    t2 = time.perf_counter()
    pp, lp = out / "params.bin", out / "runlog.csv"
    io.write_params(pp, params)
    io.write_runlog(lp, runlog)
    artifacts = [pp, lp]
    if dump is not None:
        dp = Path(args.debug_dump)
        dump.write(dp)
        if dp.resolve().parent == out.resolve():
            artifacts.append(dp)
    snapshot = cfg.to_dict()
    snapshot["ablation"] = args.ablation
    _write_manifest(out, "train", cfg.train.rng_seed, snapshot, artifacts,
                    {"load_s": t1 - t0, "train_s": t2 - t1, "total_s": time.perf_counter() - t0},
                    {"scenes": len(scenes), "steps": cfg.train.total_steps})
    return EXIT_OK


# ---------------------------------------------------------------- eval

def svg_bar_chart(per_keypoint: dict) -> str:
    """Grouped bars of per-keypoint OKS (3D and 2D)."""
    names = list(per_keypoint)
    bw, gap, h, top, left = 14, 12, 200, 20, 40
    width = left + len(names) * (2 * bw + gap) + 20
    height = top + h + 110
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="sans-serif" font-size="10">',
             f'<line x1="{left}" y1="{top + h}" x2="{width - 10}" y2="{top + h}" stroke="black"/>',
             f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + h}" stroke="black"/>']
    for t in (0.0, 0.5, 1.0):
        y = top + h - t * h
        parts.append(f'<text x="{left - 4}" y="{y + 3:.1f}" text-anchor="end">{t:.1f}</text>')
    for i, name in enumerate(names):
        x0 = left + gap / 2 + i * (2 * bw + gap)
        for j, (key, colour) in enumerate((("oks_3d", "#3b6ea5"), ("oks_2d", "#e08a2c"))):
            v = per_keypoint[name].get(key) or 0.0
            parts.append(f'<rect x="{x0 + j * bw:.1f}" y="{top + h - v * h:.1f}" width="{bw}" '
                         f'height="{v * h:.1f}" fill="{colour}"><title>{name} {key} {v:.3f}'
                         f'</title></rect>')
        cx = x0 + bw
        parts.append(f'<text x="{cx:.1f}" y="{top + h + 8}" text-anchor="end" '
                     f'transform="rotate(-60 {cx:.1f} {top + h + 8})">{name}</text>')
    parts.append(f'<text x="{left}" y="12">per-keypoint OKS: 3D (blue), 2D (orange)</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _eval_config(args) -> io.PipelineConfig:
    if args.config is not None:
        return _load_config(args.config)
    sibling = Path(args.params).parent / "manifest.json"
    if sibling.exists():
        return _load_config(sibling)
    return io.PipelineConfig()


def cmd_eval(args) -> int:
    cfg = _eval_config(args)
    if args.ablation is not None:
        cfg = replace(cfg, train=ablation_config(args.ablation, cfg.train, cfg.loss))
    try:
        params = io.read_params(args.params)
    except InvalidConfig as e:
        raise InputError(f"{args.params}: {e}") from None
    _, scenes = _load_scenes(args.scenes)
    try:
        rep = evaluate_params(params, scenes, cfg.train, cfg.fusion)
    except NoVisibleKeypoints as e:
        raise InputError(str(e)) from None
    io.write_json(args.report, rep.to_dict())
    if args.plot:
        Path(args.plot).write_text(svg_bar_chart(rep.per_keypoint))
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["keypoint", "oks_3d", "oks_2d", "acc_3d", "acc_2d", "count"])
            for name, row in rep.per_keypoint.items():
                w.writerow([name] + ["" if row[c] is None else row[c]
                                     for c in ("oks_3d", "oks_2d", "acc_3d", "acc_2d", "count")])
    log.info("OKS@3D/ACC %.4f  MPJPE %.4f m  OKS@2D/ACC %.4f  (%d scored, %d skipped)",
             rep.oks_acc_3d, rep.mpjpe_m, rep.oks_acc_2d, rep.n_samples, rep.n_skipped)
    return EXIT_OK


# ---------------------------------------------------------------- ablation matrix

def cmd_ablation_matrix(args) -> int:
    t0 = time.perf_counter()
    cfg = _train_config(argparse.Namespace(steps=args.steps, seed=args.seed, ablation=None),
                        _load_config(args.config))
    _, scenes = _load_scenes(args.scenes)
    if args.eval_scenes:
        _, eval_scenes = _load_scenes(args.eval_scenes)
        train_scenes = scenes
    else:
        n_eval = max(1, round(len(scenes) * args.holdout))
        train_scenes, eval_scenes = scenes[:-n_eval], scenes[-n_eval:]
    if not train_scenes or not eval_scenes:
        raise InputError("need at least one training and one evaluation scene")
    out = _out_dir(args.out)
    rows = run_ablation(train_scenes, eval_scenes, cfg.train, cfg.loss, cfg.labelgen, cfg.fusion)
    jp, cp = out / "ablation.json", out / "ablation.csv"
    io.write_json(jp, {"rows": rows})
    buf = _stdio.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows([{k: ("" if v is None else v) for k, v in r.items()} for r in rows])
    cp.write_text(buf.getvalue())
    for r in rows:
        log.info("%-10s OKS@3D %s  MPJPE %s  OKS@2D %s%s", r["config"], r["oks_3d"], r["mpjpe_m"],
                 r["oks_2d"], f"  FAILED {r['error']}" if r["error"] else "")
    _write_manifest(out, "ablation_matrix", cfg.train.rng_seed, cfg.to_dict(), [jp, cp],
                    {"total_s": time.perf_counter() - t0},
                    {"train_scenes": len(train_scenes), "eval_scenes": len(eval_scenes),
                     "failed_rows": sum(r["error"] is not None for r in rows)})
    return EXIT_OK


# ---------------------------------------------------------------- heatmaps

def cmd_heatmaps(args) -> int:
    cfg = _load_config(args.config)
    paths, scenes = _load_scenes(args.scenes)
    out = _out_dir(args.out)
    for path, scene in zip(paths, scenes):
        h = oracle_heatmap(scene, cfg.fusion)
        for k, name in enumerate(KEYPOINT_NAMES):
            write_pgm(out / f"{path.stem}_{k:02d}_{name}.pgm", h.grid[:, :, k])
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weaksup-pose", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic scene dataset")
    s.add_argument("--n-scenes", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pose-family", default="mixed")
    s.add_argument("--occlusion-rate", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("labelgen", help="pseudo 3D labels and pointwise labels")
    s.add_argument("--scenes", required=True)
    s.add_argument("--T", type=float, default=None, help="softmax temperature (1/px^2)")
    s.add_argument("--Tr", type=float, default=None, help="reliability temperature (1/px^2)")
    s.add_argument("--radius", type=float, default=None, help="positive radius (px)")
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_labelgen)

    s = sub.add_parser("train", help="train the point network")
    s.add_argument("--scenes", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--config", default=None, help="config JSON or a previous run manifest")
    s.add_argument("--ablation", choices=list(ABLATIONS), default=None)
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--debug-dump", default=None, help="CSV of per-step camera-feature stats")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="evaluate trained parameters")
    s.add_argument("--scenes", required=True)
    s.add_argument("--params", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--ablation", choices=list(ABLATIONS), default=None)
    s.add_argument("--plot", default=None, help="SVG bar chart of per-keypoint OKS")
    s.add_argument("--csv", default=None, help="per-keypoint table as CSV")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("ablation_matrix", aliases=["ablation-matrix"],
                       help="train and evaluate all four configurations")
    s.add_argument("--scenes", required=True)
    s.add_argument("--eval-scenes", default=None)
    s.add_argument("--holdout", type=float, default=0.2,
                   help="held-out fraction when --eval-scenes is not given")
    s.add_argument("--config", default=None)
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_ablation_matrix)

    s = sub.add_parser("heatmaps", help="dump oracle heatmaps as 16-bit PGM")
    s.add_argument("--scenes", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_heatmaps)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose
                        else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except DivergenceDetected as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except InvalidConfig as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
