import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skeletonmap.blocks import (EPS_CLEAR, GlobalScale, segment_distance, R, RadialScale, SegmentTransport, TransitionProfile,
                                TransportSpec, G1_on_ball_similarity, G2_on_ball_similarity,
                                axis_suspension_H, lambda_s, make_transport, segment_stage,
                                skeleton_project, skeleton_project_nearest, smoothstep,
                                smoothstep_deriv)
from skeletonmap.errors import CellCenterSingularity, InsideExcludedBall, TubeObstructed
from skeletonmap.spheremaps import cubify, make_sphere_map, suspend

P05 = TransitionProfile(0.05)


def test_smoothstep_ends_and_slope():
    assert smoothstep(np.array([-1.0, 0.0]))[1] == 0 and smoothstep(np.array([1.0, 2.0]))[0] == 1
    u = np.linspace(0, 1, 200_001)
    d = smoothstep_deriv(u)
    assert d.max() == pytest.approx(2.0, rel=1e-6)
    fd = np.gradient(smoothstep(u), u)
    assert np.allclose(d[1:-1], fd[1:-1], atol=1e-6)


def test_lambda_examples():
    assert lambda_s(0.2, P05) == 0.2
    assert lambda_s(0.0, P05) == 0.0
    assert lambda_s(0.48, P05) == 0.5
    assert lambda_s(-0.52, P05) == -0.5
    assert lambda_s(0.7, P05) == 0.7


@settings(max_examples=200, deadline=None)
@given(st.floats(-2, 2), st.floats(0.01, 0.24))
def test_lambda_properties(t, s):
    prof = TransitionProfile(s)
    v = float(prof(t))
    assert v == -float(prof(-t))
    if abs(abs(t) - 0.5) > 2 * s:
        assert v == t
    if abs(abs(t) - 0.5) < s:
        assert v == 0.5 * np.sign(t)
    assert float(prof(t + 1e-3)) >= v


def test_lambda_monotone_dense():
    t = np.linspace(-1, 1, 100_001)
    assert np.all(np.diff(P05(t)) >= 0)


def test_R_examples():
    assert np.array_equal(R(np.zeros(4), P05), np.zeros(4))
    x = np.array([0.48, 0.2, -0.1, 0.3])
    out = R(x, P05)
    assert np.array_equal(out, [0.5, 0.2, -0.1, 0.3])
    assert np.max(np.abs(out)) == 0.5
    x = np.full(4, 0.3)
    assert np.array_equal(R(x, P05), x)


def test_R_idempotent_on_plateau(rng):
    X = rng.uniform(-0.6, 0.6, size=(5000, 4))
    snapped = np.all(np.abs(np.abs(X) - 0.5) < 0.05, axis=1)
    X = X[snapped] if snapped.any() else X[:0]
    X = np.vstack([X, 0.5 + rng.uniform(-0.049, 0.049, size=(500, 4))])
    assert np.array_equal(R(R(X, P05), P05), R(X, P05))


def test_H_norm_preserving(rng):
    h = make_sphere_map(4, 3)
    X = rng.normal(size=(10_000, 5)) * rng.uniform(0, 1, (10_000, 1)) / 3
    assert np.max(np.abs(np.linalg.norm(axis_suspension_H(X, h), axis=1) - np.linalg.norm(X, axis=1))) < 1e-12


def test_H_examples(rng):
    h = make_sphere_map(4, 3)
    assert np.array_equal(axis_suspension_H(np.array([0, 0, 0, 0, 0.7]), h), [0, 0, 0, 0.7])
    rho, t0 = 0.013, 0.2
    U = rng.normal(size=(1000, 5))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    X = np.array([0, 0, 0, 0, t0]) + rho * U
    Y = axis_suspension_H(X, h)
    assert np.allclose(Y, np.array([0, 0, 0, t0]) + rho * suspend(h, U), atol=1e-15)
    W = rng.normal(size=(100, 5))
    W[:, :4] *= rho / np.linalg.norm(W[:, :4], axis=1, keepdims=True)
    assert np.allclose(np.linalg.norm(axis_suspension_H(W, h)[:, :3], axis=1), rho)


def test_radial_scale_similarity_and_inverse(rng):
    st_ = RadialScale(np.zeros(3), 0.2, 0.3, 0.25)
    X = rng.normal(size=(500, 3)) * 0.1
    inside = np.linalg.norm(X, axis=1) <= 0.2
    assert np.allclose(st_.forward(X[inside]), 0.25 * X[inside])
    Y = rng.uniform(-0.5, 0.5, (2000, 3))
    assert np.allclose(st_.inverse(st_.forward(Y)), Y, atol=1e-12)
    grow = RadialScale(np.zeros(3), 0.05, 0.3, 4.0)
    assert np.allclose(grow.forward(X[np.linalg.norm(X, axis=1) < 0.05]),
                       4 * X[np.linalg.norm(X, axis=1) < 0.05])
    assert np.allclose(grow.inverse(grow.forward(Y)), Y, atol=1e-12)


def test_segment_transport(rng):
    tr = SegmentTransport(np.array([0.0, 0, 0]), np.array([0.3, 0.1, 0]), 0.05, 0.04, 25)
    assert tr.lipschitz <= 0.8 + 1e-12 or tr.lipschitz < 1
    X = rng.normal(size=(300, 3))
    X *= 0.05 / np.linalg.norm(X, axis=1, keepdims=True) * rng.uniform(0, 1, (300, 1))
    assert np.allclose(tr.forward(X), X + [0.3, 0.1, 0], atol=1e-15)
    far = np.array([[0.0, 0.0, 0.5]])
    assert np.array_equal(tr.forward(far), far)
    Y = rng.uniform(-0.3, 0.6, (3000, 3))
    assert np.allclose(tr.inverse(tr.forward(Y)), Y, atol=1e-12)


def test_segment_stage_lipschitz_and_obstruction():
    st_ = segment_stage(np.zeros(3), np.array([0.4, 0, 0]), 0.02, [(np.array([0, 0.3, 0]), 0.05)], 1.0)
    assert st_.lipschitz <= 0.8 + 1e-9
    with pytest.raises(TubeObstructed, match="obstacle 0"):
        segment_stage(np.zeros(3), np.array([0.4, 0, 0]), 0.02, [(np.array([0.2, 0.03, 0]), 0.02)], 1.0)
    with pytest.raises(TubeObstructed, match="boundary"):
        segment_stage(np.zeros(3), np.array([0.97, 0, 0]), 0.02, [], 1.0)


def test_make_transport_contract(rng):
    spec = TransportSpec(np.array([0.1, 0, 0]), 0.08, np.array([-0.2, 0.2, 0.1]), 0.04,
                         obstacles=[(np.array([0.3, 0.3, 0.3]), 0.05)])
    T = make_transport(spec, rng=np.random.default_rng(0))
    assert np.allclose(T(spec.source_center[None]), spec.target_center, atol=1e-14)
    V = rng.normal(size=(200, 3))
    V *= 0.08 / np.linalg.norm(V, axis=1, keepdims=True) * rng.uniform(0, 1, (200, 1))
    assert np.allclose(T(spec.source_center + V), spec.target_center + 0.5 * V, atol=1e-14)
    assert np.array_equal(T(np.array([[0.0, 0.0, 0.97]])), [[0.0, 0.0, 0.97]])
    Y = rng.uniform(-0.9, 0.9, (3000, 3)) / np.sqrt(3)
    assert np.allclose(T.inverse(T(Y)), Y, atol=1e-10)
    same = make_transport(TransportSpec(np.zeros(3), 0.1, np.zeros(3), 0.1))
    assert same.stages == [] and np.array_equal(same(Y), Y)


def test_G1_contract(desk, rng):
    lay = desk.layout
    X = rng.normal(size=(1000, 5))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    X *= rng.uniform(0.951, 1.0, (1000, 1))
    assert np.array_equal(desk.g1(X), X)
    assert np.allclose(desk.g1(lay.centers), lay.aligned_centers, atol=1e-15)
    B = rng.uniform(-1, 1, (1000, 5)) / np.sqrt(5)
    assert np.max(np.abs(desk.g1.inverse(desk.g1(B)) - B)) < 1e-9
    for i in (0, 7, 15):
        sim = G1_on_ball_similarity(lay, i)
        U = rng.normal(size=(100, 5))
        U *= 0.15 / np.linalg.norm(U, axis=1, keepdims=True)
        assert np.allclose(desk.g1(lay.centers[i] + U), sim(lay.centers[i] + U), atol=1e-14)


def test_G2_contract(desk, rng):
    lay, p = desk.layout, desk.params
    assert desk.g2.stages[0].factor == 1.0
    a = np.zeros((16, 4))
    a[:, -1] = lay.aligned_centers[:, -1]
    assert np.allclose(desk.g2(a), lay.cell_centers, atol=1e-14)
    Z = rng.uniform(-1, 1, (1000, 4)) / 2
    assert np.max(np.abs(desk.g2.inverse(desk.g2(Z)) - Z)) < 1e-9
    for i in (2, 9):
        sim = G2_on_ball_similarity(lay, p, i)
        U = rng.normal(size=(100, 4))
        U *= lay.aligned_radius / np.linalg.norm(U, axis=1, keepdims=True)
        out = desk.g2(a[i] + U)
        assert np.allclose(out, sim(a[i] + U), atol=1e-14)
        assert np.allclose(np.linalg.norm(out - lay.cell_centers[i], axis=1), p.inscribed_radius)


def _replay_clearances(pipe, centers, radius, skip_first=False):
    """Track every ball through the stages and return the smallest support clearance."""
    pos = [c.copy() for c in centers]
    rad = [radius] * len(centers)
    worst = np.inf
    stages = pipe.stages[1:] if skip_first else pipe.stages
    for st_ in stages:
        if isinstance(st_, RadialScale):
            i = int(np.argmin([np.linalg.norm(p - st_.center) for p in pos]))
            reach = st_.r_out
            others = [j for j in range(len(pos)) if j != i]
            for j in others:
                worst = min(worst, np.linalg.norm(pos[j] - st_.center) - rad[j] - reach)
            rad[i] = rad[i] * st_.alpha
        else:
            i = int(np.argmin([np.linalg.norm(p - st_.start) for p in pos]))
            assert np.linalg.norm(pos[i] - st_.start) < 1e-12
            assert abs(rad[i] - st_.r) < 1e-12
            for j in range(len(pos)):
                if j != i:
                    d = segment_distance(pos[j][None], st_.start, st_.end)[0]
                    worst = min(worst, d - rad[j] - st_.r - st_.w)
            pos[i] = st_.end.copy()
    return worst, pos, rad


def test_stage_supports_clear_the_other_balls(desk):
    lay, p = desk.layout, desk.params
    worst, pos, rad = _replay_clearances(desk.g1, lay.centers, lay.radius)
    assert worst >= EPS_CLEAR
    assert np.allclose(pos, lay.aligned_centers) and np.allclose(rad, lay.aligned_radius)
    start = np.zeros((16, 4))
    start[:, -1] = p.inflation * lay.aligned_centers[:, -1]
    worst, pos, rad = _replay_clearances(desk.g2, start, p.inflation * lay.aligned_radius,
                                         skip_first=True)
    assert worst >= EPS_CLEAR
    assert np.allclose(pos, lay.cell_centers) and np.allclose(rad, p.inscribed_radius)
    for st_ in desk.g1.stages + desk.g2.stages[1:]:
        if isinstance(st_, SegmentTransport):
            assert st_.lipschitz <= 0.8 + 1e-9


def test_skeleton_project_examples(rng):
    n, R_in = 2, 0.225
    z = np.array([0.0, 0.1, -0.2, 0.3])  # on the facet x1 = 0 shared by two cells
    assert np.allclose(skeleton_project(z, n, R_in), z, atol=1e-15)
    b = rng.normal(size=(50, 4))
    b = cubify(b)
    assert np.allclose(skeleton_project(b, n, R_in), b)
    cc = np.array([0.25, -0.25, 0.25, 0.25])
    U = rng.normal(size=(200, 4))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    out = skeleton_project(cc + R_in * U, n, R_in)
    assert np.allclose(out, cc + cubify(U) / n, atol=1e-15)


def test_skeleton_project_errors():
    with pytest.raises(InsideExcludedBall):
        skeleton_project(np.array([0.25, 0.25, 0.25, 0.3]), 2, 0.225)
    with pytest.raises(CellCenterSingularity):
        skeleton_project(np.array([0.25, 0.25, 0.25, 0.25]), 2, None)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-0.7, 0.7), min_size=4, max_size=4), st.integers(2, 5))
def test_skeleton_membership(z, n):
    z = np.array(z)
    cc = -0.5 + (np.clip(np.floor((z + 0.5) * n), 0, n - 1) + 0.5) / n
    if np.max(np.abs(z)) < 0.5 and np.max(np.abs(z - cc)) < 1e-9:
        return
    y = skeleton_project(z, n, None)
    q = (y + 0.5) * n
    assert np.min(np.abs(q - np.round(q))) / n < 1e-12
    assert np.max(np.abs(y)) <= 0.5 + 1e-15


def test_nearest_point_variant_lands_near_skeleton():
    prof = TransitionProfile(0.05)
    z = np.array([0.49, 0.1, 0.2, -0.3])
    y = skeleton_project_nearest(z, 1, prof)
    assert y[0] == 0.5
    assert np.array_equal(GlobalScale(2.0).inverse(GlobalScale(2.0).forward(z)), z)
