"""Procedural pedestrian scenes with ground-truth 3D keypoints.

A skeleton is built by forward kinematics, its surface is approximated by
capsules around the bones plus a sphere for the head, and a simple LiDAR
model keeps only the nearest return per angular bucket and drops returns
hidden behind an optional box occluder.

All randomness flows from ``np.random.Philox`` keyed on the config seed, so
scenes reproduce bit-for-bit across platforms.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import K
from .errors import DegenerateScene, InvalidConfig
from .geometry import CameraModel, default_camera, project_cloud, rotation_z

POSE_FAMILIES = ("standing", "walking", "cycling", "random_articulation")

NOSE, L_SH, R_SH, L_EL, R_EL, L_WR, R_WR, L_HIP, R_HIP, L_KN, R_KN, L_AN, R_AN = range(K)

# (parent, child) pairs; -1 stands for the head center
BONES = (
    (L_SH, R_SH), (L_HIP, R_HIP), (L_SH, L_HIP), (R_SH, R_HIP),
    (L_SH, L_EL), (L_EL, L_WR), (R_SH, R_EL), (R_EL, R_WR),
    (L_HIP, L_KN), (L_KN, L_AN), (R_HIP, R_KN), (R_KN, R_AN),
)

LIMB_BONES = {
    "upper_arm": ((L_SH, L_EL), (R_SH, R_EL)),
    "forearm": ((L_EL, L_WR), (R_EL, R_WR)),
    "thigh": ((L_HIP, L_KN), (R_HIP, R_KN)),
    "shin": ((L_KN, L_AN), (R_KN, R_AN)),
}

# stream ids for independent random substreams
_SKELETON, _SURFACE, _OCCLUDER, _PLACEMENT = 1, 2, 3, 4


def make_rng(*keys: int) -> np.random.Generator:
    """Philox generator keyed on a tuple of non-negative integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(x) for x in self.lo)
        hi = tuple(float(x) for x in self.hi)
        if any(a >= b for a, b in zip(lo, hi)):
            raise InvalidConfig("box lo must be below hi on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


@dataclass(frozen=True)
class SynthConfig:
    rng_seed: int = 0
    n_surface_points: int = 2048
    limb_radius: float = 0.07
    occluder: Optional[Box] = None
    # place a box in front of the legs of whatever skeleton is generated
    occlude_legs: bool = False
    angular_resolution: float = 0.004
    noise_sigma: float = 0.005
    yaw: Optional[float] = None
    distance_range: tuple = (8.5, 12.0)
    lateral_range: float = 0.3
    sensor_height: float = 0.9
    self_occlusion_margin: float = 0.15
    # a visible keypoint needs a surviving return projecting this close to it
    support_radius_px: float = 5.0
    camera: CameraModel = field(default_factory=default_camera)

    def __post_init__(self):
        if int(self.rng_seed) < 0 or int(self.rng_seed) >= 2**64:
            raise InvalidConfig("rng_seed must be a 64-bit unsigned integer")
        if self.n_surface_points < 1:
            raise InvalidConfig("n_surface_points must be >= 1")
        if not 0 < self.limb_radius <= 0.3:
            raise InvalidConfig("limb_radius must lie in (0, 0.3]")
        if not self.angular_resolution > 0:
            raise InvalidConfig("angular_resolution must be positive")
        if not self.noise_sigma >= 0:
            raise InvalidConfig("noise_sigma must be non-negative")
        if not self.support_radius_px > 0:
            raise InvalidConfig("support_radius_px must be positive")
        lo, hi = self.distance_range
        if not 0 < lo <= hi:
            raise InvalidConfig("distance_range must be positive and ordered")


@dataclass(frozen=True)
class SkeletonPose:
    joints: np.ndarray  # (13, 3) meters, LiDAR frame
    visibility: np.ndarray  # (13,) int
    head_center: np.ndarray  # (3,)
    neck: np.ndarray  # (3,) midpoint of the shoulders

    def segments(self) -> np.ndarray:
        """All bone segments as an (S, 2, 3) array, neck-to-head last."""
        segs = [(self.joints[a], self.joints[b]) for a, b in BONES]
        segs.append((self.neck, self.head_center))
        return np.array(segs)

    def bone_length(self, a: int, b: int) -> float:
        return float(np.linalg.norm(self.joints[a] - self.joints[b]))


@dataclass
class Scene:
    points: np.ndarray  # (N, 3)
    uv: np.ndarray  # (N, 2)
    depth: np.ndarray  # (N,)
    keypoints_2d: np.ndarray  # (13, 2)
    visibility: np.ndarray  # (13,) int
    camera: CameraModel
    keypoints_3d_gt: Optional[np.ndarray] = None  # (13, 3)
    scene_id: str = ""

    @property
    def n_points(self) -> int:
        return len(self.points)

    def select(self, idx) -> "Scene":
        idx = np.asarray(idx, dtype=np.intp)
        return replace(self, points=self.points[idx], uv=self.uv[idx], depth=self.depth[idx])


def _limb_dir(flex, abd, side):
    # flex rotates forward (+x), abd rotates outward (side * y); zero is straight down
    return np.array([np.sin(flex) * np.cos(abd), side * np.sin(abd), -np.cos(flex) * np.cos(abd)])


def _family_angles(family: str, rng: np.random.Generator) -> dict:
    d = np.deg2rad
    u = lambda a, b: d(rng.uniform(a, b))  # noqa: E731
    if family == "standing":
        a = dict(sf=[u(-10, 10), u(-10, 10)], sa=[u(3, 15), u(3, 15)],
                 ef=[u(0, 25), u(0, 25)], hf=[u(-5, 5), u(-5, 5)],
                 ha=[u(0, 6), u(0, 6)], kf=[u(0, 10), u(0, 10)],
                 lean=u(-3, 5), tilt=u(-10, 10), head_yaw=u(-20, 20), clearance=0.08)
    elif family == "walking":
        phase = rng.uniform(0, 2 * np.pi)
        arm_amp, leg_amp = u(15, 35), u(15, 30)
        s = np.sin(phase)
        a = dict(sf=[arm_amp * s, -arm_amp * s], sa=[u(3, 12), u(3, 12)],
                 ef=[u(10, 40), u(10, 40)], hf=[-leg_amp * s, leg_amp * s],
                 ha=[u(0, 5), u(0, 5)],
                 kf=[d(5) + u(0, 40) * max(0.0, -s), d(5) + u(0, 40) * max(0.0, s)],
                 lean=u(0, 10), tilt=u(-10, 10), head_yaw=u(-20, 20), clearance=0.08)
    elif family == "cycling":
        phase = rng.uniform(0, 2 * np.pi)
        s, c = np.sin(phase), np.cos(phase)
        a = dict(sf=[u(50, 75), u(50, 75)], sa=[u(0, 10), u(0, 10)],
                 ef=[u(5, 30), u(5, 30)], hf=[d(70 + 25 * s), d(70 - 25 * s)],
                 ha=[u(0, 10), u(0, 10)], kf=[d(75 + 30 * c), d(75 - 30 * c)],
                 lean=u(20, 40), tilt=u(-10, 20), head_yaw=u(-20, 20), clearance=0.25)
    elif family == "random_articulation":
        a = dict(sf=[u(-60, 160), u(-60, 160)], sa=[u(0, 120), u(0, 120)],
                 ef=[u(0, 140), u(0, 140)], hf=[u(-30, 110), u(-30, 110)],
                 ha=[u(0, 40), u(0, 40)], kf=[u(0, 130), u(0, 130)],
                 lean=u(-10, 40), tilt=u(-30, 30), head_yaw=u(-60, 60), clearance=0.08)
    else:
        raise InvalidConfig(f"unknown pose family {family!r}")
    return a


def generate_skeleton(config: SynthConfig, pose_family: str = "standing") -> SkeletonPose:
    """Forward-kinematics skeleton placed in front of the sensor."""
    rng = make_rng(config.rng_seed, _SKELETON)
    height_scale = rng.uniform(1.55, 1.95) / 1.75
    jitter = lambda: rng.uniform(0.95, 1.05) * height_scale  # noqa: E731
    shoulder_w, hip_w = 0.36 * jitter(), 0.26 * jitter()
    torso, neck_len = 0.50 * jitter(), 0.22 * jitter()
    upper_arm, forearm = 0.30 * jitter(), 0.27 * jitter()
    thigh, shin = 0.44 * jitter(), 0.43 * jitter()

    ang = _family_angles(pose_family, rng)
    yaw = rng.uniform(0, 2 * np.pi) if config.yaw is None else config.yaw
    lo, hi = config.distance_range
    dist = rng.uniform(lo, hi)
    lateral = rng.uniform(-config.lateral_range, config.lateral_range)

    j = np.zeros((K, 3))
    hip_c = np.zeros(3)
    j[L_HIP] = hip_c + [0, hip_w / 2, 0]
    j[R_HIP] = hip_c - [0, hip_w / 2, 0]
    lean = ang["lean"]
    neck = hip_c + torso * np.array([np.sin(lean), 0, np.cos(lean)])
    j[L_SH] = neck + [0, shoulder_w / 2, 0]
    j[R_SH] = neck - [0, shoulder_w / 2, 0]
    head_tilt = lean + ang["tilt"]
    head_c = neck + neck_len * np.array([np.sin(head_tilt), 0, np.cos(head_tilt)])
    hy = ang["head_yaw"]
    j[NOSE] = head_c + config.limb_radius * np.array([np.cos(hy), np.sin(hy), 0])

    for side_i, side in enumerate((1.0, -1.0)):
        sh, el, wr = (L_SH, L_EL, L_WR) if side > 0 else (R_SH, R_EL, R_WR)
        hp, kn, an = (L_HIP, L_KN, L_AN) if side > 0 else (R_HIP, R_KN, R_AN)
        sf, sa = ang["sf"][side_i], ang["sa"][side_i]
        j[el] = j[sh] + upper_arm * _limb_dir(sf, sa, side)
        j[wr] = j[el] + forearm * _limb_dir(sf + ang["ef"][side_i], sa, side)
        hf, ha = ang["hf"][side_i], ang["ha"][side_i]
        j[kn] = j[hp] + thigh * _limb_dir(hf, ha, side)
        j[an] = j[kn] + shin * _limb_dir(hf - ang["kf"][side_i], ha, side)

    R = rotation_z(yaw)
    ground = -config.sensor_height
    pts = np.vstack([j, head_c, neck]) @ R.T
    pts[:, 2] += ground + ang["clearance"] - min(pts[L_AN, 2], pts[R_AN, 2])
    pts[:, 0] += dist
    pts[:, 1] += lateral
    return SkeletonPose(joints=pts[:K], visibility=np.ones(K, dtype=int),
                        head_center=pts[K], neck=pts[K + 1])


def sample_surface(skeleton: SkeletonPose, config: SynthConfig) -> np.ndarray:
    """Points on limb capsules plus a head sphere, area-proportional.

    Every noiseless point lies exactly ``limb_radius`` from a bone segment or
    from a joint / the head center.
    """
    rng = make_rng(config.rng_seed, _SURFACE)
    r = config.limb_radius
    segs = skeleton.segments()
    lengths = np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)
    # capsules: joint spheres close the limb tubes; the head sphere comes last
    centers = np.vstack([skeleton.joints[1:], skeleton.head_center])
    areas = np.concatenate([2 * np.pi * r * lengths, np.full(len(centers), 4 * np.pi * r * r)])
    counts = rng.multinomial(config.n_surface_points, areas / areas.sum())

    out = []
    for (a, b), n in zip(segs, counts[:len(segs)]):
        if n == 0:
            continue
        axis = b - a
        e = axis / np.linalg.norm(axis)
        helper = np.array([1.0, 0, 0]) if abs(e[0]) < 0.9 else np.array([0, 1.0, 0])
        n1 = np.cross(e, helper)
        n1 /= np.linalg.norm(n1)
        n2 = np.cross(e, n1)
        t = rng.uniform(0, 1, n)
        theta = rng.uniform(0, 2 * np.pi, n)
        out.append(a + t[:, None] * axis
                   + r * (np.cos(theta)[:, None] * n1 + np.sin(theta)[:, None] * n2))
    for c, n in zip(centers, counts[len(segs):]):
        if n == 0:
            continue
        d = rng.standard_normal((n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        out.append(c + r * d)
    pts = np.vstack(out)
    if config.noise_sigma > 0:
        pts = pts + rng.normal(0.0, config.noise_sigma, pts.shape)
    return pts


def ray_box_hits(origin, targets, box: Box) -> np.ndarray:
    """True where the segment origin->target enters the box before the target."""
    targets = np.asarray(targets, dtype=float).reshape(-1, 3)
    origin = np.asarray(origin, dtype=float)
    lo, hi = np.array(box.lo), np.array(box.hi)
    d = targets - origin
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - origin) / d
        t2 = (hi - origin) / d
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    # axis-parallel rays: inside the slab means unconstrained, outside means a miss
    parallel = d == 0
    inside = (origin >= lo) & (origin <= hi)
    tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
    t_enter = tmin.max(axis=1)
    t_exit = tmax.min(axis=1)
    return (t_enter <= t_exit) & (t_exit >= 0) & (t_enter < 1)


def angular_buckets(cam: CameraModel, points, resolution: float) -> np.ndarray:
    pc = cam.to_camera(points)
    az = np.arctan2(pc[:, 0], pc[:, 2])
    el = np.arctan2(pc[:, 1], np.hypot(pc[:, 0], pc[:, 2]))
    return np.stack([np.floor(az / resolution), np.floor(el / resolution)], axis=1).astype(np.int64)


def lidar_keep_indices(points, camera: CameraModel, config: SynthConfig,
                       occluder: Optional[Box] = None) -> np.ndarray:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        return np.zeros(0, dtype=np.intp)
    _, depth = project_cloud(camera, points)
    buckets = angular_buckets(camera, points, config.angular_resolution)
    # stable sort by depth then bucket: first row per bucket is the nearest, ties by index
    order = np.lexsort((np.arange(len(points)), depth, buckets[:, 1], buckets[:, 0]))
    b = buckets[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = np.any(b[1:] != b[:-1], axis=1)
    keep = np.sort(order[first])
    box = occluder if occluder is not None else config.occluder
    if box is not None:
        keep = keep[~ray_box_hits(camera.center, points[keep], box)]
    return keep


def apply_lidar_model(points, camera: CameraModel, config: SynthConfig,
                      occluder: Optional[Box] = None) -> np.ndarray:
    """Z-buffer per angular bucket, then remove points shadowed by the occluder."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    return points[lidar_keep_indices(points, camera, config, occluder)]


def leg_occluder(skeleton: SkeletonPose, camera: CameraModel, config: SynthConfig) -> Box:
    """Box between sensor and pedestrian hiding ankles and knees but not hips."""
    rng = make_rng(config.rng_seed, _OCCLUDER)
    c = camera.center
    j = skeleton.joints - c
    x_person = j[:, 0].min()
    gap = rng.uniform(1.0, 2.0)
    x_near = max(x_person - gap, 1.0)
    x_far = x_near + 0.3
    ray_h = lambda k: j[k, 2] * x_near / j[k, 0]  # noqa: E731
    low = max(ray_h(k) for k in (L_KN, R_KN, L_AN, R_AN))
    high = min(ray_h(k) for k in (L_HIP, R_HIP))
    # the shadow is taken at the near face, so the top must clear knees there
    top = low + 0.02 + (high - low - 0.04) * rng.uniform(0.25, 0.75) if high - low > 0.06 else low + 0.02
    ground = -config.sensor_height - c[2]
    y_mid = j[:, 1].mean() * x_near / j[:, 0].mean()
    return Box(lo=(c[0] + x_near, c[1] + y_mid - 1.5, c[2] + ground - 0.1),
               hi=(c[0] + x_far, c[1] + y_mid + 1.5, c[2] + top))


def _visibility(joints, kept_points, camera, config, occluder) -> np.ndarray:
    uv, depth = project_cloud(camera, joints)
    vis = camera.in_image(uv).astype(int)
    if occluder is not None:
        vis[ray_box_hits(camera.center, joints, occluder)] = 0
    if len(kept_points) == 0:
        return np.zeros(K, dtype=int)
    jc = camera.to_camera(joints)
    pc = camera.to_camera(kept_points)
    ju = jc / np.linalg.norm(jc, axis=1, keepdims=True)
    pu = pc / np.linalg.norm(pc, axis=1, keepdims=True)
    cross = np.linalg.norm(np.cross(ju[:, None, :], pu[None, :, :]), axis=2)
    angle = np.arctan2(cross, ju @ pu.T)
    near = angle <= 2 * config.angular_resolution
    kept_uv, _ = project_cloud(camera, kept_points)
    px = np.linalg.norm(uv[:, None, :] - kept_uv[None, :, :], axis=2)
    vis[px.min(axis=1) > config.support_radius_px] = 0
    for k in range(K):
        # the nearest return along the joint's ray must come from the joint's own surface
        if not near[k].any() or abs(pc[near[k], 2].min() - depth[k]) > config.self_occlusion_margin:
            vis[k] = 0
    return vis


def make_scene(config: SynthConfig, pose_family: str = "standing", scene_id: str = "") -> Scene:
    """Compose skeleton, surface sampling, LiDAR culling and projection."""
    cam = config.camera
    skel = generate_skeleton(config, pose_family)
    occluder = config.occluder
    if occluder is None and config.occlude_legs:
        occluder = leg_occluder(skel, cam, config)
    surface = sample_surface(skel, config)
    pts = apply_lidar_model(surface, cam, config, occluder)
    if len(pts) < 8:
        raise DegenerateScene(f"only {len(pts)} points survive occlusion")
    uv, depth = project_cloud(cam, pts)
    vis = _visibility(skel.joints, pts, cam, config, occluder)
    if not vis.any():
        raise DegenerateScene("no visible keypoints")
    kp2d, _ = project_cloud(cam, skel.joints)
    skel = replace(skel, visibility=vis)
    return Scene(points=pts, uv=uv, depth=depth, keypoints_2d=kp2d, visibility=vis,
                 camera=cam, keypoints_3d_gt=skel.joints.copy(), scene_id=scene_id)
