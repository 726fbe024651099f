import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from equiro import se3
from equiro.errors import DegeneratePair, RankDeficient, TooFewPoints
from equiro.preprocess import (CompensatedFrame, IrlsConfig, compensate_edge_velocity,
                               compensate_node_velocities, edge_velocities,
                               estimate_ego_velocity, rigid_edge_velocity, smoothed_l1,
                               translate_prev_frame)
from equiro.radar_cloud import RadarFrame, expected_doppler
from equiro.synth import synthetic_frame

seeds = st.integers(0, 2**32 - 1)


def test_planar_example_is_rank_deficient():
    pos = [[10, 0, 0], [0, 10, 0], [10, 10, 0]]
    f = RadarFrame(0, pos, [1.0, 0.0, math.sqrt(2) / 2], [0, 0, 0])
    with pytest.raises(RankDeficient):
        estimate_ego_velocity(f)


def test_recovers_unit_forward_velocity():
    pos = np.array([[10, 0, 0], [0, 10, 0], [10, 10, 0], [0, 0, 10]], float)
    dop = expected_doppler(pos, [1.0, 0, 0])
    assert np.allclose(dop, [1.0, 0.0, math.sqrt(2) / 2, 0.0], atol=1e-15)
    est = estimate_ego_velocity(RadarFrame(0, pos, dop, np.zeros(4)))
    assert np.allclose(est.v_ego, [1, 0, 0], atol=1e-6)
    assert est.converged


def test_too_few_points():
    with pytest.raises(TooFewPoints):
        estimate_ego_velocity(RadarFrame(0, [[1, 0, 0], [0, 1, 0]], [0, 0], [0, 0]))


def test_zero_doppler_gives_zero_velocity():
    frame, _, _ = synthetic_frame(5, n_static=30, v_ego=np.zeros(3))
    assert np.array_equal(frame.doppler, np.zeros(30))
    assert np.allclose(estimate_ego_velocity(frame).v_ego, 0, atol=1e-15)


def test_dynamic_outliers_within_one_percent():
    for seed in range(10):
        frame, v, _ = synthetic_frame(seed, n_static=100, n_dynamic=20, dynamic_speed=5.0)
        est = estimate_ego_velocity(frame)
        assert np.linalg.norm(est.v_ego - v) <= 0.01 * np.linalg.norm(v)
        assert (est.weights > 0).all() and (est.residuals >= 0).all()


@given(seeds)
def test_robust_objective_never_increases(seed):
    frame, _, _ = synthetic_frame(seed, n_static=40, n_dynamic=10)
    cfg = IrlsConfig()
    est = estimate_ego_velocity(frame, cfg)
    tr = est.objective_trace
    assert len(tr) == est.iterations_used + 1
    for a, b in zip(tr, tr[1:]):
        assert b <= a * (1 + 1e-12) + 1e-15


def test_smoothed_objective_matches_definition():
    r = np.array([0.0, 1e-6, 0.3, -2.0])
    eps = 1e-5
    ref = sum(abs(x) - eps * math.log(1 + abs(x) / eps) for x in r)
    assert smoothed_l1(r, eps) == pytest.approx(ref, rel=1e-14)


def test_irls_config_validation():
    with pytest.raises(ValueError):
        IrlsConfig(epsilon=0)
    with pytest.raises(ValueError):
        IrlsConfig(max_iterations=0)


def test_static_points_compensate_to_zero():
    frame, v, _ = synthetic_frame(1, n_static=50)
    cf = compensate_node_velocities(frame, v)
    assert np.max(np.abs(cf.node_velocity)) <= 1e-9


def test_dynamic_point_keeps_radial_absolute_velocity():
    frame, v, v_abs = synthetic_frame(2, n_static=5, n_dynamic=5)
    cf = compensate_node_velocities(frame, v)
    u = frame.directions
    assert np.allclose(cf.node_velocity, -np.einsum("ij,ij->i", u, v_abs), atol=1e-12)


@given(seeds)
def test_node_velocity_invariant_under_joint_rotation(seed):
    frame, v, _ = synthetic_frame(seed, n_static=10, n_dynamic=10)
    r = se3.random_rotation(seed)
    a = compensate_node_velocities(frame, v).node_velocity
    b = compensate_node_velocities(frame.with_positions(frame.positions @ r.T), r @ v).node_velocity
    assert np.max(np.abs(a - b)) <= 1e-9


def test_niv_uses_raw_doppler_and_plain_differences():
    frame, v, _ = synthetic_frame(4, n_static=6)
    cf = compensate_node_velocities(frame, v, niv=True)
    assert np.array_equal(cf.node_velocity, frame.doppler)
    e = np.array([[0, 1], [2, 5]])
    assert np.array_equal(edge_velocities(cf, e), frame.doppler[[0, 2]] - frame.doppler[[1, 5]])


def test_static_edge_velocity_zero():
    assert compensate_edge_velocity([1, 2, 3], 0.0, [4, 5, 6], 0.0) == 0.0


def _comoving_pair(rng):
    v_abs = rng.normal(0, 3, 3)
    v_ego = rng.normal(0, 3, 3)
    pts = rng.uniform(-30, 30, (2, 3))
    dop = expected_doppler(pts, v_ego, np.tile(v_abs, (2, 1)))
    cf = compensate_node_velocities(RadarFrame(0, pts, dop, [0, 0]), v_ego)
    return pts, cf.node_velocity, v_abs


@given(seeds)
def test_edge_velocity_equals_rigid_closed_form(seed):
    pts, vc, v_abs = _comoving_pair(np.random.default_rng(seed))
    got = compensate_edge_velocity(pts[0], vc[0], pts[1], vc[1])
    assert got == pytest.approx(rigid_edge_velocity(v_abs, pts[0], pts[1]), abs=1e-9)
    # with the positive-approaching sign, the i -> j projection carries a minus
    # relative to the (rho_i - rho_j) form
    lit = np.dot(v_abs, pts[0] - pts[1]) / np.linalg.norm(pts[0] - pts[1])
    assert got == pytest.approx(-lit, abs=1e-9)


@given(seeds)
def test_comoving_edge_velocity_invariant_under_rigid_motion(seed):
    rng = np.random.default_rng(seed)
    pts, vc, v_abs = _comoving_pair(rng)
    pose = se3.random_pose(rng, 10.0)
    moved = se3.apply(pose, pts)
    v2 = pose.rotation @ v_abs
    ve2 = rng.normal(0, 3, 3)
    dop = expected_doppler(moved, ve2, np.tile(v2, (2, 1)))
    vc2 = compensate_node_velocities(RadarFrame(0, moved, dop, [0, 0]), ve2).node_velocity
    a = compensate_edge_velocity(pts[0], vc[0], pts[1], vc[1])
    b = compensate_edge_velocity(moved[0], vc2[0], moved[1], vc2[1])
    assert abs(a - b) <= 1e-9


@given(seeds)
def test_any_edge_velocity_invariant_under_rotation(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-20, 20, (2, 3))
    vc = rng.normal(0, 2, 2)
    r = se3.random_rotation(rng)
    a = compensate_edge_velocity(pts[0], vc[0], pts[1], vc[1])
    b = compensate_edge_velocity(r @ pts[0], vc[0], r @ pts[1], vc[1])
    assert abs(a - b) <= 1e-9


def test_degenerate_pair():
    with pytest.raises(DegeneratePair):
        compensate_edge_velocity([1, 1, 1], 0.3, [1, 1, 1 + 1e-7], 0.1)


def test_edge_velocity_antisymmetric():
    a = compensate_edge_velocity([1, 2, 3], 0.4, [3, -1, 2], -0.2)
    b = compensate_edge_velocity([3, -1, 2], -0.2, [1, 2, 3], 0.4)
    assert a == pytest.approx(-b, abs=1e-15)


def test_translate_prev_frame():
    f = RadarFrame(0, [[5, 1, 0], [3, -2, 1]], [0, 0], [1, 2])
    assert translate_prev_frame(f, np.zeros(3), 0.1).same_as(f)
    g = translate_prev_frame(f, [2.0, 0, 0], 0.5)
    assert np.allclose(g.positions[:, 0], f.positions[:, 0] - 1.0)
    assert np.array_equal(g.doppler, f.doppler) and np.array_equal(g.rcs, f.rcs)
    with pytest.raises(ValueError):
        translate_prev_frame(f, np.zeros(3), 0.0)


def test_translated_frame_aligns_with_next_frame_on_straight_motion():
    from equiro.synth import generate_sequence, get_preset
    seq, gt = generate_sequence(get_preset("straight", noiseless=True))
    a, b, la, lb = seq.frames[3], seq.frames[4], seq.labels[3], seq.labels[4]
    moved = translate_prev_frame(a, gt.v_ego[3], b.timestamp - a.timestamp)
    common, ia, ib = np.intersect1d(la.point_id, lb.point_id, return_indices=True)
    assert len(common) > 50
    assert np.allclose(moved.positions[ia], b.positions[ib], atol=1e-9)
