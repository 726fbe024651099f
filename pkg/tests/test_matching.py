import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from equiro import se3
from equiro.config import PipelineConfig, init_params
from equiro.errors import (DegenerateGeometry, DegenerateMatrix, EmptyInput, StageError,
                           TooFewPoints)
from equiro.evaluation import oracle_features
from equiro.matching import (IcpConfig, MatchConfig, PairConfig, accumulate_odometry,
                             assignment_entropy, icp_register, register_pair,
                             select_correspondences, similarity, sinkhorn, weighted_svd)
from equiro.radar_cloud import RadarFrame
from equiro.synth import MotionSegment, SceneSpec, generate_sequence, synthetic_frame

seeds = st.integers(0, 2**32 - 1)


def greedy_oracle(f1, f2, m):
    d = np.array([[np.linalg.norm(a - b) for b in f2] for a in f1])
    cands = sorted((d[i, j], i, j) for i in range(len(f1)) for j in range(len(f2)))
    src, tgt = [], []
    for _, i, j in cands:
        if i not in src and j not in tgt:
            src.append(i)
            tgt.append(j)
        if len(src) == m:
            break
    return src, tgt


# -- correspondences ---------------------------------------------------------

def test_identical_features_give_identity_matching():
    f = np.random.default_rng(0).standard_normal((20, 5))
    c = select_correspondences(f, f, 10)
    assert np.array_equal(c.source, c.target)
    assert np.all(np.diag(c.distances) == 0)


def test_dominant_pair_selected_first():
    f1 = np.array([[0.0], [10.0], [20.0]])
    f2 = np.array([[20.001], [50.0], [80.0]])
    c = select_correspondences(f1, f2, 3)
    assert (c.source[0], c.target[0]) == (2, 0)


@given(seeds)
def test_selection_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    f1, f2 = rng.standard_normal((15, 4)), rng.standard_normal((12, 4))
    c = select_correspondences(f1, f2, 8)
    src, tgt = greedy_oracle(f1, f2, 8)
    assert c.source.tolist() == src and c.target.tolist() == tgt
    assert len(set(src)) == 8 and len(set(tgt)) == 8
    assert np.allclose(c.distances, [[np.linalg.norm(f1[i] - f2[j]) for j in tgt] for i in src])


def test_too_few_points_for_m():
    with pytest.raises(TooFewPoints):
        select_correspondences(np.zeros((3, 2)), np.zeros((5, 2)), 4)


def test_match_config_validation():
    for bad in (dict(M=2), dict(K=0), dict(beta=math.inf), dict(sinkhorn_floor=0)):
        with pytest.raises(ValueError):
            MatchConfig(**bad)


# -- similarity and Sinkhorn -----------------------------------------------------

def test_similarity_examples():
    assert similarity([[0.5]], 0.5, 3.0)[0, 0] == 1.0
    assert np.all(similarity(np.random.default_rng(1).uniform(0, 9, (4, 4)), 0.5, 0.0) == 1.0)
    assert similarity([[1.0]], 0.5, 2.0)[0, 0] == pytest.approx(0.367879, abs=1e-6)
    assert np.isfinite(similarity([[-1e6]], 0.0, 1.0)).all()


def test_sinkhorn_uniform():
    w = sinkhorn(np.full((5, 5), 3.0), 1)
    assert np.allclose(w, 0.2, atol=1e-15)


def test_sinkhorn_fixed_point():
    rng = np.random.default_rng(2)
    p = np.eye(6)[rng.permutation(6)]
    ds = 0.5 * p + 0.5 * np.full((6, 6), 1 / 6)
    assert np.allclose(sinkhorn(ds, 10), ds, atol=1e-9)


@given(seeds)
def test_sinkhorn_marginals(seed):
    rng = np.random.default_rng(seed)
    w = sinkhorn(rng.uniform(0.01, 1.0, (12, 12)), 10)
    assert np.allclose(w.sum(0), 1, atol=1e-6) and np.allclose(w.sum(1), 1, atol=1e-6)
    assert (w >= 0).all() and (w <= 1).all()


def test_sinkhorn_diagonal_dominant_limit():
    # Sinkhorn scaling keeps cross-ratios s_ii s_jj / (s_ij s_ji), so the
    # limit of a constant-diagonal, constant-off-diagonal matrix keeps that
    # shape: diagonal 10 / (10 + 0.1 (M - 1)). For M = 8 that is 0.9346.
    m = 8
    s = np.full((m, m), 0.1) + np.eye(m) * 9.9
    w = sinkhorn(s, 10)
    expected = 10 / (10 + 0.1 * (m - 1))
    assert np.allclose(np.diag(w), expected, atol=1e-12)
    assert np.argmax(w, axis=1).tolist() == list(range(m))


def test_sinkhorn_degenerate_without_floor():
    s = np.ones((3, 3))
    s[1] = 0
    with pytest.raises(DegenerateMatrix):
        sinkhorn(s, 5, floor=None)
    assert np.isfinite(sinkhorn(s, 5)).all()


def test_assignment_entropy_bounds():
    assert assignment_entropy(np.eye(4)) == pytest.approx(0.0, abs=1e-12)
    assert assignment_entropy(np.full((4, 4), 0.25)) == pytest.approx(math.log(4))


# -- weighted SVD -----------------------------------------------------------------

def test_svd_identity():
    p = np.random.default_rng(3).uniform(-5, 5, (10, 3))
    est = weighted_svd(p, p, np.eye(10) / 10)
    assert np.allclose(est.rotation, np.eye(3), atol=1e-9)
    assert np.allclose(est.translation, 0, atol=1e-9)


@given(seeds)
def test_svd_recovers_random_pose(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(-10, 10, (16, 3))
    pose = se3.random_pose(rng, 5.0)
    est = weighted_svd(p, se3.apply(pose, p), np.eye(16) / 16)
    assert est.allclose(pose, atol=1e-6)


@given(seeds)
def test_svd_never_reflects(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(-10, 10, (12, 3))
    q = p * np.array([-1.0, 1.0, 1.0])
    r = weighted_svd(p, q, np.eye(12) / 12).rotation
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


def test_svd_collinear_is_degenerate():
    p = np.outer(np.arange(8.0), [1.0, 2.0, -1.0])
    with pytest.raises(DegenerateGeometry):
        weighted_svd(p, p + 1.0, np.eye(8) / 8)
    with pytest.raises(DegenerateGeometry):
        weighted_svd(np.eye(3), np.eye(3), np.zeros((3, 3)))


def test_svd_error_grows_with_noise():
    medians = []
    for sigma in (0.0, 0.01, 0.05, 0.1):
        errs = []
        for seed in range(60):
            rng = np.random.default_rng([seed, 7])
            p = rng.uniform(-10, 10, (30, 3))
            pose = se3.random_pose(rng, 5.0)
            q = se3.apply(pose, p) + rng.normal(0, sigma, p.shape)
            est = weighted_svd(p, q, np.eye(30) / 30)
            errs.append(np.linalg.norm(est.translation - pose.translation))
        medians.append(np.median(errs))
    assert medians[0] < 1e-9
    assert all(a < b for a, b in zip(medians, medians[1:]))


# -- full pair -------------------------------------------------------------------

def _params(**kw):
    return init_params(PipelineConfig()).replace(**kw)


def test_identical_frames_give_identity():
    # zero Doppler keeps the translation pre-alignment at zero, so both
    # frames see exactly the same input; a sharp assignment (large beta)
    # removes the soft-weighting bias of untrained features
    f, _, _ = synthetic_frame(0, n_static=150, v_ego=np.zeros(3), extent=15.0)
    g = RadarFrame(0.1, f.positions, f.doppler, f.rcs)
    res = register_pair(f, g, _params(beta=20.0))
    assert res.pose.allclose(se3.RelativePose.identity(), atol=1e-6)
    assert "assignment_entropy" in res.diagnostics and "inlier_residuals" in res.diagnostics


def _two_frame_scene(speed, yaw_deg, seed=0):
    rng = np.random.default_rng(seed)
    lm = rng.uniform([-5, -30, -1], [60, 30, 4], (800, 3))
    spec = SceneSpec(lm, rng.uniform(0, 20, 800),
                     [MotionSegment(0.1, speed, math.radians(yaw_deg) / 0.1)], seed=seed)
    seq, gt = generate_sequence(spec)
    truth = se3.compose(se3.inverse(gt.poses[0]), gt.poses[1])
    feats = tuple(oracle_features(seq.frames[k], gt.labels[k]) for k in (0, 1))
    return seq, truth, feats


def test_pure_translation_with_oracle_features():
    seq, truth, feats = _two_frame_scene(5.0, 0.0)
    res = register_pair(seq.frames[0], seq.frames[1], _params(), features=feats)
    assert np.allclose(res.sensor_motion.translation, truth.translation, atol=1e-6)
    assert se3.rotation_angle(res.sensor_motion.rotation) < 1e-8


def test_ten_degree_turn_with_oracle_features():
    seq, truth, feats = _two_frame_scene(5.0, 10.0)
    res = register_pair(seq.frames[0], seq.frames[1], _params(), features=feats)
    err = se3.compose(se3.inverse(truth), res.sensor_motion)
    assert math.degrees(se3.rotation_angle(err.rotation)) < 0.5
    assert np.linalg.norm(err.translation) < 1e-3


def test_rigid_copy_with_oracle_features():
    rng = np.random.default_rng(5)
    f, _, _ = synthetic_frame(rng, n_static=120, v_ego=np.zeros(3), extent=20.0)
    pose = se3.random_pose(rng, 0.0)  # pure rotation; zero Doppler means zero pre-shift
    g = RadarFrame(0.1, se3.apply(pose, f.positions), f.doppler, f.rcs)
    feat = rng.uniform(0, 100, (120, 8))
    res = register_pair(f, g, _params(), features=(feat, feat))
    assert np.linalg.norm(res.pose.translation - pose.translation) <= 1e-3
    assert math.degrees(se3.rotation_angle(res.pose.rotation.T @ pose.rotation)) <= 0.1


def test_stage_labels_on_failure():
    f = RadarFrame(0.0, [[1, 0, 0], [0, 1, 0]], [0, 0], [0, 0])
    with pytest.raises(StageError) as info:
        register_pair(f, RadarFrame(0.1, f.positions, f.doppler, f.rcs), _params())
    assert info.value.stage == "ego_velocity"
    assert info.value.exit_code == 3


# -- ICP --------------------------------------------------------------------------

def test_icp_identity():
    f, _, _ = synthetic_frame(6, n_static=100)
    res = icp_register(f, f)
    assert res.converged
    assert res.pose.allclose(se3.RelativePose.identity(), atol=1e-12)


def test_icp_small_rotation():
    rng = np.random.default_rng(7)
    f, _, _ = synthetic_frame(rng, n_static=300, extent=20.0)
    r = se3.rot_z(math.radians(2.0))
    g = f.with_positions(f.positions @ r.T + [0.1, -0.05, 0.0])
    res = icp_register(f, g)
    assert se3.rotation_angle(res.pose.rotation.T @ r) < 1e-3


def test_icp_large_rotation_is_only_recorded():
    rng = np.random.default_rng(8)
    f, _, _ = synthetic_frame(rng, n_static=40, extent=20.0)
    r = se3.rot_z(math.radians(40.0))
    res = icp_register(f, f.with_positions(f.positions @ r.T), IcpConfig(max_iterations=30))
    err = se3.rotation_angle(res.pose.rotation.T @ r)
    assert np.isfinite(err)  # the error itself is allowed to be large


def test_icp_empty():
    with pytest.raises(EmptyInput):
        icp_register(RadarFrame.empty(), RadarFrame.empty())


# -- accumulation -----------------------------------------------------------------

def test_accumulate_single_identity():
    t = accumulate_odometry([se3.RelativePose.identity()])
    assert len(t) == 2
    assert all(p.allclose(se3.RelativePose.identity()) for p in t.poses)


def test_accumulate_matches_matrix_power():
    m = se3.random_pose(9, 2.0)
    t = accumulate_odometry([m] * 7, timestamps=np.arange(8) * 0.1)
    for k, p in enumerate(t.poses):
        assert np.allclose(p.matrix(), np.linalg.matrix_power(m.matrix(), k), atol=1e-10)


def test_accumulate_empty():
    with pytest.raises(EmptyInput):
        accumulate_odometry([])
