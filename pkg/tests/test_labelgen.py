import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from conftest import PROPERTY
from weaksup_pose import K
from weaksup_pose.errors import AllInvisible, EmptyCloud, InvalidConfig, MissingGroundTruth
from weaksup_pose.geometry import default_camera
from weaksup_pose.labelgen import (LabelGenConfig, PseudoLabels, label_quality_report, pointwise_labels,
                                   pseudo_3d_labels, softmax_weights)
from weaksup_pose.synth import Scene


def make(points, uv, kp2d, vis=None, gt=None):
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    kp = np.zeros((K, 2))
    kp[: len(kp2d)] = kp2d
    if vis is None:
        vis = np.zeros(K, dtype=int)
        vis[: len(kp2d)] = 1
    return Scene(points, uv, np.ones(len(points)), kp, np.asarray(vis), default_camera(), gt, "t")


def reference_labels(points, uv, kp, vis, T, Tr):
    """Straight double loop, no stabilisation tricks beyond the definition."""
    y = np.zeros((K, 3))
    r = np.zeros(K)
    for k in range(K):
        if not vis[k]:
            continue
        d2 = [sum((uv[i][c] - kp[k][c]) ** 2 for c in range(2)) for i in range(len(points))]
        m = min(d2)
        w = [math.exp(-T * (d - m)) for d in d2]
        z = sum(w)
        for i in range(len(points)):
            for c in range(3):
                y[k][c] += w[i] / z * points[i][c]
        r[k] = math.exp(-Tr * m)
    return y, r


def test_single_point_on_keypoint():
    lab = pseudo_3d_labels(make([[1, 2, 3]], [[10, 10]], [[10, 10]]), LabelGenConfig())
    assert np.array_equal(lab.y_tilde[0], [1, 2, 3]) and lab.reliability[0] == 1.0


@pytest.mark.parametrize("T", [1e-6, 0.05, 1.0, 50.0])
def test_symmetric_points_average(T):
    a, b = np.array([1.0, 2, 3]), np.array([3.0, -2, 5])
    lab = pseudo_3d_labels(make([a, b], [[7, 10], [13, 10]], [[10, 10]]), LabelGenConfig(temperature=T))
    assert np.allclose(lab.y_tilde[0], (a + b) / 2, rtol=0, atol=1e-12)


def test_three_point_softmax_weights():
    pts = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
    lab = pseudo_3d_labels(make(pts, [[0, 0], [1, 0], [2, 0]], [[0, 0]]), LabelGenConfig(temperature=1.0))
    z = 1 + math.exp(-1) + math.exp(-4)
    assert np.allclose(lab.y_tilde[0], [1 / z, math.exp(-1) / z, math.exp(-4) / z], rtol=0, atol=1e-15)
    assert np.allclose(lab.y_tilde[0], [0.7214, 0.2654, 0.0132], atol=5e-5)


def test_reliability_value():
    lab = pseudo_3d_labels(make([[0, 0, 1]], [[1, 0]], [[0, 0]]), LabelGenConfig(reliability_temperature=1.0))
    assert lab.reliability[0] == pytest.approx(math.exp(-1), abs=1e-15)
    assert round(lab.reliability[0], 5) == 0.36788


def test_pointwise_boundary_inclusive():
    sc = make(np.zeros((3, 3)), [[5, 0], [5 + 1e-9, 0], [3, 4]], [[0, 0]])
    lab = pointwise_labels(sc, LabelGenConfig(positive_radius=5.0))
    assert list(lab[:, 0]) == [1, 0, 1]


def test_invisible_column_and_sentinels():
    vis = np.zeros(K, dtype=int)
    vis[1] = 1
    sc = make(np.ones((4, 3)), np.zeros((4, 2)), [[0, 0], [0, 0]], vis=vis)
    lab = pseudo_3d_labels(sc, LabelGenConfig())
    assert not lab.pointwise[:, 0].any() and lab.pointwise[:, 1].all()
    assert np.all(lab.y_tilde[0] == 0) and lab.reliability[0] == 0
    assert np.all(lab.pointwise[:, 2:] == 0)


def test_errors():
    with pytest.raises(EmptyCloud):
        pseudo_3d_labels(make(np.zeros((0, 3)), np.zeros((0, 2)), [[0, 0]]), LabelGenConfig())
    with pytest.raises(EmptyCloud):
        pointwise_labels(make(np.zeros((0, 3)), np.zeros((0, 2)), [[0, 0]]), LabelGenConfig())
    with pytest.raises(AllInvisible):
        pseudo_3d_labels(make([[0, 0, 1]], [[0, 0]], [[0, 0]], vis=np.zeros(K, int)), LabelGenConfig())
    for kw in (dict(temperature=0), dict(reliability_temperature=-1), dict(positive_radius=0)):
        with pytest.raises(InvalidConfig):
            LabelGenConfig(**kw)


def test_quality_report_exact_and_missing_gt():
    pts = np.array([[1.0, 2, 3]])
    gt = np.zeros((K, 3))
    gt[0] = pts[0]
    sc = make(pts, [[10, 10]], [[10, 10]], gt=gt)
    lab = pseudo_3d_labels(sc, LabelGenConfig())
    rep = label_quality_report(sc, lab)
    assert rep.error_m[0] == 0 and rep.mean_error_m == 0
    assert np.isnan(rep.error_m[1])
    with pytest.raises(MissingGroundTruth):
        label_quality_report(make(pts, [[10, 10]], [[10, 10]]), lab)


def test_quality_report_flags_empty_neighbourhood():
    sc = make([[0, 0, 1]], [[50, 0]], [[0, 0]], gt=np.zeros((K, 3)))
    lab = pseudo_3d_labels(sc, LabelGenConfig(reliability_temperature=0.01))
    rep = label_quality_report(sc, lab, LabelGenConfig())
    assert lab.reliability[0] == pytest.approx(math.exp(-25), rel=1e-12)
    assert rep.low_reliability[0] and rep.min_neighbor_px[0] == 50


clouds = st.integers(1, 50).flatmap(lambda n: st.tuples(
    hnp.arrays(float, (n, 3), elements=st.floats(-10, 10)),
    hnp.arrays(float, (n, 2), elements=st.floats(0, 256)),
))
kp_strategy = hnp.arrays(float, (K, 2), elements=st.floats(0, 256))
vis_strategy = hnp.arrays(int, (K,), elements=st.integers(0, 1)).filter(lambda v: v.any())


@PROPERTY
@given(cloud=clouds, kp=kp_strategy, vis=vis_strategy, T=st.floats(1e-4, 1.0))
def test_matches_reference_and_is_convex(cloud, kp, vis, T):
    pts, uv = cloud
    sc = make(pts, uv, kp, vis=vis)
    cfg = LabelGenConfig(temperature=T, reliability_temperature=0.01)
    lab = pseudo_3d_labels(sc, cfg)
    y, r = reference_labels(pts.tolist(), uv.tolist(), kp.tolist(), vis.tolist(), T, 0.01)
    assert np.allclose(lab.y_tilde, y, rtol=0, atol=1e-12)
    assert np.allclose(lab.reliability, r, rtol=0, atol=1e-12)
    d2 = ((uv[:, None, :] - kp[None]) ** 2).sum(-1)
    alpha = softmax_weights(d2, T)
    assert np.all(alpha >= 0) and np.allclose(alpha.sum(axis=0), 1, rtol=0, atol=1e-12)
    v = vis > 0
    assert np.all(lab.y_tilde[v] >= pts.min(axis=0) - 1e-12)
    assert np.all(lab.y_tilde[v] <= pts.max(axis=0) + 1e-12)
    assert np.all((lab.reliability >= 0) & (lab.reliability <= 1))
    # strictly positive unless exp underflows float64
    representable = v & (0.01 * d2.min(axis=0) < 700)
    assert np.all(lab.reliability[representable] > 0)
    # positives lie within the radius
    ii, kk = np.nonzero(lab.pointwise)
    assert np.all(np.sqrt(d2[ii, kk]) <= cfg.positive_radius)


@PROPERTY
@given(d2=hnp.arrays(float, (20, K), elements=st.floats(0, 1e4)), c=st.floats(-1e3, 1e3),
       T=st.floats(1e-3, 1.0))
def test_softmax_translation_invariance(d2, c, T):
    assert np.allclose(softmax_weights(d2, T), softmax_weights(d2 + c, T), rtol=0, atol=1e-12)


@PROPERTY
@given(cloud=clouds, kp=kp_strategy)
def test_temperature_limits(cloud, kp):
    pts, uv = cloud
    vis = np.ones(K, dtype=int)
    sc = make(pts, uv, kp, vis=vis)
    T0 = 1e-12
    lo = pseudo_3d_labels(sc, LabelGenConfig(temperature=T0))
    d2 = ((uv[:, None, :] - kp[None]) ** 2).sum(-1)
    # weights deviate from 1/N by at most ~T * range(d^2) / N
    spread = np.abs(pts - pts.mean(axis=0)).max()
    bound = 1.01 * T0 * np.ptp(d2, axis=0)[:, None] * spread + 1e-12
    assert np.all(np.abs(lo.y_tilde - pts.mean(axis=0)) <= bound)
    srt = np.sort(d2, axis=0)
    hi = pseudo_3d_labels(sc, LabelGenConfig(temperature=1e6))
    for k in range(K):
        if len(pts) == 1 or srt[1, k] - srt[0, k] > 1e-4:  # unique nearest point
            assert np.allclose(hi.y_tilde[k], pts[np.argmin(d2[:, k])], rtol=0, atol=1e-6)


def test_small_temperature_gives_centroid():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, (30, 3))
    uv = rng.uniform(100, 104, (30, 2))
    lab = pseudo_3d_labels(make(pts, uv, [[102, 102]]), LabelGenConfig(temperature=1e-12))
    assert np.allclose(lab.y_tilde[0], pts.mean(axis=0), rtol=0, atol=1e-9)


@PROPERTY
@given(a=st.floats(0, 100), b=st.floats(0, 100), Tr=st.floats(1e-3, 0.1))
def test_reliability_strictly_decreasing(a, b, Tr):
    if abs(a - b) < 1e-3:
        return
    cfg = LabelGenConfig(reliability_temperature=Tr)
    ra = pseudo_3d_labels(make([[0, 0, 1]], [[a, 0]], [[0, 0]]), cfg).reliability[0]
    rb = pseudo_3d_labels(make([[0, 0, 1]], [[b, 0]], [[0, 0]]), cfg).reliability[0]
    assert (ra > rb) == (a < b)


def test_dataset_label_fidelity(small_scenes):
    errs = []
    for sc in small_scenes:
        lab = pseudo_3d_labels(sc, LabelGenConfig())
        rep = label_quality_report(sc, lab)
        errs.append(rep.error_m[np.isfinite(rep.error_m)])
    e = np.concatenate(errs)
    assert e.mean() <= 0.10 and e.max() <= 0.25
