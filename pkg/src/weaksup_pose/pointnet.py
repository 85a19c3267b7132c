"""Two-branch point network in plain numpy.

A shared per-point MLP encodes each row of the fused cloud, a max-pool over
points gives the global feature, a regression head maps it to 13x3 keypoint
offsets and a segmentation head maps ``[point feature | global feature]`` to
13 sigmoid scores per point. Gradients are derived by hand; max-pool routes
each feature's gradient to the first point attaining the maximum.

Flat parameter layout: layers in the order encoder, segmentation head,
regression head; per layer the weight matrix ``W[fan_in, fan_out]``
(row-major) followed by the bias ``b[fan_out]``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import K
from .errors import CacheMismatch, DivergenceDetected, EmptyCloud, InvalidConfig
from .fusion import HeatmapOracleConfig, fuse
from .labelgen import LabelGenConfig, PseudoLabels, pseudo_3d_labels
from .losses import LossConfig, segmentation_loss, weighted_huber
from .synth import Scene, make_rng

IN_DIM = 3 + K
PARAMS_MAGIC = b"WSPNET01"


@dataclass(frozen=True)
class NetConfig:
    encoder: tuple = (64, 128, 256)
    seg_head: tuple = (256, 128)
    reg_head: tuple = (256, 128)

    def layer_shapes(self) -> list[tuple[int, int]]:
        shapes = []
        prev = IN_DIM
        for w in self.encoder:
            shapes.append((prev, w))
            prev = w
        feat = prev
        prev = 2 * feat
        for w in (*self.seg_head, K):
            shapes.append((prev, w))
            prev = w
        prev = feat
        for w in (*self.reg_head, 3 * K):
            shapes.append((prev, w))
            prev = w
        return shapes

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in self.layer_shapes())


@dataclass
class PointNetParams:
    net: NetConfig
    flat: np.ndarray

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.net.n_params,):
            raise InvalidConfig(f"expected {self.net.n_params} parameters, got {self.flat.shape}")

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, b) views into the flat vector."""
        return unflatten(self.net, self.flat)

    def groups(self):
        layers = self.layers()
        ne, ns = len(self.net.encoder), len(self.net.seg_head) + 1
        return layers[:ne], layers[ne:ne + ns], layers[ne + ns:]


def unflatten(net: NetConfig, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    out, i = [], 0
    for a, b in net.layer_shapes():
        W = flat[i:i + a * b].reshape(a, b)
        i += a * b
        out.append((W, flat[i:i + b]))
        i += b
    return out


def flatten(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in layers])


def init_params(net: NetConfig = NetConfig(), seed: int = 0) -> PointNetParams:
    """Glorot-uniform weights, zero biases."""
    rng = make_rng(seed, 7)
    parts = []
    for a, b in net.layer_shapes():
        lim = np.sqrt(6.0 / (a + b))
        parts += [rng.uniform(-lim, lim, a * b), np.zeros(b)]
    return PointNetParams(net, np.concatenate(parts))


def zero_params(net: NetConfig = NetConfig()) -> PointNetParams:
    return PointNetParams(net, np.zeros(net.n_params))


@dataclass
class Cache:
    params: np.ndarray
    x: np.ndarray
    enc: list  # per encoder layer: (input, pre-activation)
    feat: np.ndarray
    argmax: np.ndarray
    glob: np.ndarray
    seg: list
    scores: np.ndarray
    reg: list


def _relu(z):
    return np.maximum(z, 0.0)


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _outer_sum(a, dz):
    """sum_b a[b].T @ dz[b] as a single matmul."""
    return a.reshape(-1, a.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])


def forward_batch(params: PointNetParams, x: np.ndarray):
    """Forward pass on a (B, N, 3 + K) batch.

    Returns ``(keypoints[B, 13, 3], scores[B, N, 13], cache)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != IN_DIM:
        raise InvalidConfig(f"expected (B, N, {IN_DIM}) input, got {x.shape}")
    if x.shape[1] == 0:
        raise EmptyCloud("fused cloud has no rows")
    enc_l, seg_l, reg_l = params.groups()

    h = x
    enc = []
    for W, b in enc_l:
        z = h @ W + b
        enc.append((h, z))
        h = _relu(z)
    feat = h
    argmax = feat.argmax(axis=1)  # first index on ties
    glob = np.take_along_axis(feat, argmax[:, None, :], axis=1)[:, 0, :]

    seg = []
    F = feat.shape[2]
    W0, b0 = seg_l[0]
    z = feat @ W0[:F] + (glob @ W0[F:])[:, None, :] + b0
    seg.append((None, z))
    h = z
    for W, b in seg_l[1:]:
        a = _relu(h)
        z = a @ W + b
        seg.append((a, z))
        h = z
    scores = _sigmoid(h)

    reg = []
    h = glob
    for i, (W, b) in enumerate(reg_l):
        a = h if i == 0 else _relu(h)
        z = a @ W + b
        reg.append((a, z))
        h = z
    keypoints = h.reshape(-1, K, 3)
    cache = Cache(params.flat, x, enc, feat, argmax, glob, seg, scores, reg)
    return keypoints, scores, cache


def backward_batch(params: PointNetParams, x: np.ndarray, cache: Cache,
                   grad_keypoints: np.ndarray, grad_seg: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(grad_keypoints * kp) + sum(grad_seg * scores)`` w.r.t. the flat params."""
    if cache.params is not params.flat or cache.x.shape != np.shape(x) or not np.array_equal(cache.x, x):
        raise CacheMismatch("cache does not belong to these params and inputs")
    enc_l, seg_l, reg_l = params.groups()
    B = cache.x.shape[0]
    F = cache.feat.shape[2]
    grads_enc, grads_seg, grads_reg = [], [], []

    # regression head
    dz = np.asarray(grad_keypoints, dtype=np.float64).reshape(B, 3 * K)
    for i in range(len(reg_l) - 1, -1, -1):
        a, _ = cache.reg[i]
        W, _ = reg_l[i]
        grads_reg.append((a.T @ dz, dz.sum(axis=0)))
        da = dz @ W.T
        if i > 0:
            dz = da * (cache.reg[i - 1][1] > 0)
    dglob = da
    grads_reg.reverse()

    # segmentation head
    s = cache.scores
    dz = np.asarray(grad_seg, dtype=np.float64).reshape(s.shape) * s * (1.0 - s)
    for i in range(len(seg_l) - 1, 0, -1):
        a, _ = cache.seg[i]
        W, _ = seg_l[i]
        grads_seg.append((_outer_sum(a, dz), dz.sum(axis=(0, 1))))
        dz = (dz @ W.T) * (cache.seg[i - 1][1] > 0)
    W0, _ = seg_l[0]
    dz_sum = dz.sum(axis=1)  # (B, out)
    dW0 = np.vstack([_outer_sum(cache.feat, dz), cache.glob.T @ dz_sum])
    grads_seg.append((dW0, dz.sum(axis=(0, 1))))
    grads_seg.reverse()
    dfeat = dz @ W0[:F].T
    dglob = dglob + dz_sum @ W0[F:].T

    # max-pool routes to the argmax point; (b, f) pairs are unique so plain indexing accumulates correctly
    bi, fi = np.meshgrid(np.arange(B), np.arange(F), indexing="ij")
    dfeat[bi, cache.argmax, fi] += dglob

    # encoder
    dh = dfeat
    for i in range(len(enc_l) - 1, -1, -1):
        a, z = cache.enc[i]
        W, _ = enc_l[i]
        dz = dh * (z > 0)
        grads_enc.append((_outer_sum(a, dz), dz.sum(axis=(0, 1))))
        if i > 0:
            dh = dz @ W.T
    grads_enc.reverse()
    return flatten(grads_enc + grads_seg + grads_reg)


def forward(params: PointNetParams, fused: np.ndarray):
    """Single-cloud forward: ``(keypoints[13, 3], scores[N, 13], cache)``."""
    fused = np.asarray(fused, dtype=np.float64)
    if fused.ndim != 2 or len(fused) == 0:
        raise EmptyCloud("fused cloud has no rows")
    kp, scores, cache = forward_batch(params, fused[None])
    return kp[0], scores[0], cache


def backward(params: PointNetParams, fused, cache: Cache, grad_keypoints, grad_seg) -> np.ndarray:
    fused = np.asarray(fused, dtype=np.float64)
    return backward_batch(params, fused[None], cache,
                          np.asarray(grad_keypoints)[None], np.asarray(grad_seg)[None])


# ---------------------------------------------------------------- data ops

def subsample_indices(n_total: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if n_total == 0:
        raise EmptyCloud("cannot subsample an empty cloud")
    if n_total >= n:
        return rng.choice(n_total, size=n, replace=False)
    # every point once, the remainder drawn with replacement
    extra = rng.choice(n_total, size=n - n_total, replace=True)
    return rng.permutation(np.concatenate([np.arange(n_total), extra]))


def subsample_cloud(scene: Scene, n: int, seed: int) -> Scene:
    return scene.select(subsample_indices(scene.n_points, n, make_rng(seed, 11)))


def rotate_xy(points, angle: float, center) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    p = np.array(points, dtype=np.float64)
    d = p[..., :2] - center[:2]
    p[..., 0] = center[0] + c * d[..., 0] - s * d[..., 1]
    p[..., 1] = center[1] + s * d[..., 0] + c * d[..., 1]
    return p


def augment_rotation(scene: Scene, labels: PseudoLabels, angle: float):
    """Rotate points and pseudo labels about the cloud centroid in the X-Y plane.

    Cached projections are left untouched: camera features were sampled
    before augmentation.
    """
    center = scene.points.mean(axis=0)
    vis = labels.visibility > 0
    y = labels.y_tilde.copy()
    y[vis] = rotate_xy(y[vis], angle, center)
    new_scene = Scene(points=rotate_xy(scene.points, angle, center), uv=scene.uv,
                      depth=scene.depth, keypoints_2d=scene.keypoints_2d,
                      visibility=scene.visibility, camera=scene.camera,
                      keypoints_3d_gt=scene.keypoints_3d_gt, scene_id=scene.scene_id)
    new_labels = PseudoLabels(y_tilde=y, reliability=labels.reliability,
                              pointwise=labels.pointwise, visibility=labels.visibility)
    return new_scene, new_labels


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    n_points: int = 256
    batch_size: int = 8
    learning_rate: float = 0.05
    total_steps: int = 2000
    rng_seed: int = 0
    augment: bool = True
    lambda_: Optional[float] = None  # None defers to LossConfig.lambda_
    use_camera: bool = True
    center: bool = True
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        if self.n_points < 1:
            raise InvalidConfig("n_points must be >= 1")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be positive")
        if self.total_steps < 1:
            raise InvalidConfig("total_steps must be >= 1")


def cosine_lr(config: TrainConfig, step: int) -> float:
    return 0.5 * config.learning_rate * (1.0 + np.cos(np.pi * step / config.total_steps))


@dataclass
class RunLog:
    rows: list = field(default_factory=list)  # (step, lr, L_reg, L_seg, L)

    HEADER = ("step", "lr", "L_reg", "L_seg", "L")

    def append(self, step, lr, reg, seg, total):
        self.rows.append((int(step), float(lr), float(reg), float(seg), float(total)))

    def column(self, name: str) -> np.ndarray:
        return np.array([r[self.HEADER.index(name)] for r in self.rows])

    def to_csv(self) -> str:
        lines = [",".join(self.HEADER)]
        lines += [f"{s},{lr!r},{a!r},{b!r},{c!r}" for s, lr, a, b, c in self.rows]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "RunLog":
        log = cls()
        for line in text.strip().splitlines()[1:]:
            s, *rest = line.split(",")
            log.append(int(s), *(float(x) for x in rest))
        return log


@dataclass
class PreparedSample:
    fused: np.ndarray  # (N, 3 + K) full cloud
    labels: PseudoLabels


def prepare_sample(scene: Scene, labelgen_config: LabelGenConfig,
                   fusion_config: HeatmapOracleConfig, use_camera: bool = True,
                   labels: Optional[PseudoLabels] = None) -> PreparedSample:
    if labels is None:
        labels = pseudo_3d_labels(scene, labelgen_config)
    fused = fuse(scene, fusion_config)
    if not use_camera:
        fused[:, 3:] = 0.0
    return PreparedSample(fused, labels)


def network_input(fused: np.ndarray, center: bool = True):
    """Centre the coordinates; returns ``(input, offset)``."""
    x = np.array(fused, dtype=np.float64)
    c = x[:, :3].mean(axis=0) if center else np.zeros(3)
    x[:, :3] -= c
    return x, c


def _make_batch(samples, idx, config: TrainConfig, rng):
    xs, ys, rels, viss, ls = [], [], [], [], []
    for i in idx:
        s = samples[i]
        sub = subsample_indices(len(s.fused), config.n_points, rng)
        x = s.fused[sub].copy()
        y = s.labels.y_tilde.copy()
        vis = s.labels.visibility > 0
        if config.augment:
            angle = rng.uniform(0.0, 2 * np.pi)
            c = x[:, :3].mean(axis=0)
            x[:, :3] = rotate_xy(x[:, :3], angle, c)
            y[vis] = rotate_xy(y[vis], angle, c)
        x, off = network_input(x, config.center)
        y[vis] -= off
        xs.append(x)
        ys.append(y)
        rels.append(s.labels.reliability)
        viss.append(s.labels.visibility)
        ls.append(s.labels.pointwise[sub])
    return np.stack(xs), ys, rels, viss, ls


def train(dataset: list, config: TrainConfig = TrainConfig(),
          loss_config: LossConfig = LossConfig(),
          labelgen_config: LabelGenConfig = LabelGenConfig(),
          fusion_config: HeatmapOracleConfig = HeatmapOracleConfig(),
          labels: Optional[list] = None,
          init: Optional[PointNetParams] = None,
          on_batch: Optional[Callable] = None) -> tuple[PointNetParams, RunLog]:
    """Plain SGD with cosine-decayed learning rate.

    ``labels`` optionally supplies precomputed pseudo labels per scene.
    ``on_batch(step, x)`` sees every network input batch (debug hook).
    """
    if not dataset:
        raise InvalidConfig("dataset is empty")
    lam = loss_config.lambda_ if config.lambda_ is None else config.lambda_
    samples = [prepare_sample(sc, labelgen_config, fusion_config, config.use_camera,
                              None if labels is None else labels[i])
               for i, sc in enumerate(dataset)]
    params = init if init is not None else init_params(config.net, config.rng_seed)
    log = RunLog()
    B = config.batch_size
    for step in range(config.total_steps):
        rng = make_rng(config.rng_seed, 100, step)
        idx = rng.choice(len(samples), size=B, replace=len(samples) < B)
        x, ys, rels, viss, ls = _make_batch(samples, idx, config, rng)
        if on_batch is not None:
            on_batch(step, x)
        with np.errstate(over="ignore", invalid="ignore"):  # non-finite values are caught below
            kp, scores, cache = forward_batch(params, x)
        g_kp = np.zeros_like(kp)
        g_seg = np.zeros_like(scores)
        l_reg = l_seg = 0.0
        for b in range(B):
            v, g = weighted_huber(kp[b], ys[b], rels[b], viss[b], loss_config)
            l_reg += v / B
            g_kp[b] = g / B
            if lam > 0:
                v, g = segmentation_loss(scores[b], ls[b], viss[b], loss_config)
                l_seg += v / B
                g_seg[b] = lam * g / B
            else:
                l_seg += segmentation_loss(scores[b], ls[b], viss[b], loss_config)[0] / B
        total = l_reg + lam * l_seg
        if not np.isfinite(total):
            raise DivergenceDetected(step, total)
        lr = cosine_lr(config, step)
        log.append(step, lr, l_reg, l_seg, total)
        with np.errstate(over="ignore", invalid="ignore"):
            grad = backward_batch(params, x, cache, g_kp, g_seg)
        if not np.all(np.isfinite(grad)):
            raise DivergenceDetected(step, float("nan"))
        params = PointNetParams(config.net, params.flat - lr * grad)
    return params, log


def predict(params: PointNetParams, scene: Scene, config: TrainConfig = TrainConfig(),
            fusion_config: HeatmapOracleConfig = HeatmapOracleConfig(),
            seed: int = 0) -> np.ndarray:
    """3D keypoints in the LiDAR frame for one scene (deterministic subsample)."""
    fused = fuse(scene, fusion_config)
    if not config.use_camera:
        fused[:, 3:] = 0.0
    sub = subsample_indices(len(fused), config.n_points, make_rng(seed, 12))
    x, off = network_input(fused[sub], config.center)
    kp, _, _ = forward(params, x)
    return kp + off


# ---------------------------------------------------------------- params file

def params_to_bytes(params: PointNetParams) -> bytes:
    net = params.net
    head = PARAMS_MAGIC + struct.pack("<III", len(net.encoder), len(net.seg_head) + 1,
                                      len(net.reg_head) + 1)
    for a, b in net.layer_shapes():
        head += struct.pack("<II", a, b)
    return head + params.flat.astype("<f8").tobytes()


def params_from_bytes(data: bytes) -> PointNetParams:
    if data[:8] != PARAMS_MAGIC:
        raise InvalidConfig("not a parameter file")
    ne, ns, nr = struct.unpack_from("<III", data, 8)
    off = 20
    shapes = []
    for _ in range(ne + ns + nr):
        shapes.append(struct.unpack_from("<II", data, off))
        off += 8
    net = NetConfig(encoder=tuple(b for _, b in shapes[:ne]),
                    seg_head=tuple(b for _, b in shapes[ne:ne + ns - 1]),
                    reg_head=tuple(b for _, b in shapes[ne + ns:ne + ns + nr - 1]))
    if net.layer_shapes() != [tuple(s) for s in shapes]:
        raise InvalidConfig("inconsistent layer shapes in parameter header")
    flat = np.frombuffer(data, dtype="<f8", offset=off).astype(np.float64)
    return PointNetParams(net, flat)
