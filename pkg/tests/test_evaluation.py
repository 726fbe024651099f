import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from equiro import se3
from equiro.config import PipelineConfig
from equiro.errors import (EmptyInput, MalformedLine, SegmentTooLong, TimestampMismatch,
                           UnnormalizedQuaternion, UsageError)
from equiro.evaluation import (Trajectory, oracle_features, read_tum, relative_errors,
                               run_benchmark, write_segments_csv, write_tum)
from equiro.radar_cloud import Sequence
from equiro.se3 import RelativePose
from equiro.synth import generate_sequence, get_preset

seeds = st.integers(0, 2**32 - 1)


def _wiggly(seed, n=120, step=0.5):
    rng = np.random.default_rng(seed)
    poses = [RelativePose.identity()]
    for _ in range(n - 1):
        m = RelativePose(se3.rot_z(rng.normal(0, 0.03)), [step, rng.normal(0, 0.05), 0])
        poses.append(se3.compose(poses[-1], m))
    return Trajectory(np.arange(n) * 0.1, poses)


def _perturbed(traj, seed, scale=0.02):
    rng = np.random.default_rng(seed)
    out = []
    for p in traj.poses:
        d = RelativePose(se3.rotation_from_euler(rng.normal(0, scale, 3)), rng.normal(0, scale, 3))
        out.append(se3.compose(p, d))
    return Trajectory(traj.timestamps.copy(), out)


def naive_relative_errors(est, gt, lengths):
    """Independent reference: walk the path step by step for every start."""
    def xyz(k):
        return np.asarray(gt.poses[k].translation)

    t_errs, r_errs = [], []
    for length in lengths:
        for i in range(len(gt)):
            acc, j = 0.0, i
            while acc < length - 1e-9 * max(1.0, length) and j + 1 < len(gt):
                acc += np.linalg.norm(xyz(j + 1) - xyz(j))
                j += 1
            if acc < length - 1e-9 * max(1.0, length):
                continue
            g = np.linalg.inv(gt.poses[i].matrix()) @ gt.poses[j].matrix()
            e = np.linalg.inv(est.poses[i].matrix()) @ est.poses[j].matrix()
            err = np.linalg.inv(g) @ e
            t_errs.append(np.linalg.norm(err[:3, 3]) / length * 100)
            c = np.clip((np.trace(err[:3, :3]) - 1) / 2, -1, 1)
            r_errs.append(math.degrees(math.acos(c)) / length)
    return np.mean(t_errs), np.mean(r_errs)


def test_self_comparison_is_zero():
    t = _wiggly(0)
    m = relative_errors(t, t, [10, 20])
    assert (m.t_rel, m.r_rel) == (0.0, 0.0)


def test_scaled_straight_translation_gives_two_percent():
    n = 60
    gt = Trajectory(np.arange(n) * 0.1, [RelativePose(np.eye(3), [0.5 * k, 0, 0]) for k in range(n)])
    est = Trajectory(gt.timestamps, [RelativePose(np.eye(3), 1.02 * p.translation) for p in gt.poses])
    m = relative_errors(est, gt, [10, 20])
    assert m.t_rel == pytest.approx(2.0, abs=1e-6)
    assert m.r_rel == 0.0


@settings(max_examples=20)
@given(seeds)
def test_matches_naive_enumerator(seed):
    gt = _wiggly(seed)
    est = _perturbed(gt, seed + 1)
    m = relative_errors(est, gt, [10, 20, 30])
    t, r = naive_relative_errors(est, gt, [10, 20, 30])
    assert m.t_rel == pytest.approx(t, rel=1e-9)
    assert m.r_rel == pytest.approx(r, rel=1e-7, abs=1e-12)


@settings(max_examples=20)
@given(seeds)
def test_invariant_to_common_rigid_transform(seed):
    gt = _wiggly(seed, n=80)
    est = _perturbed(gt, seed)
    t = se3.random_pose(seed, 50.0)
    a = relative_errors(est, gt, [10, 20])
    b = relative_errors(est.transformed(t), gt.transformed(t), [10, 20])
    assert abs(a.t_rel - b.t_rel) <= 1e-9 and abs(a.r_rel - b.r_rel) <= 1e-9


def test_segment_too_long():
    with pytest.raises(SegmentTooLong):
        relative_errors(_wiggly(1, n=20), _wiggly(1, n=20), [100])


def test_association_within_half_period():
    gt = _wiggly(2, n=60)
    shifted = Trajectory(gt.timestamps + 0.04, gt.poses)
    assert relative_errors(shifted, gt, [10]).t_rel == 0.0
    late = Trajectory(gt.timestamps + 0.06, gt.poses)
    with pytest.raises(TimestampMismatch):
        relative_errors(late, gt, [10])


def test_segments_csv(tmp_path):
    t = _wiggly(3, n=50)
    m = relative_errors(_perturbed(t, 3), t, [10])
    write_segments_csv(m, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "start,end,length,t_err_percent,r_err_deg_per_m"
    assert len(lines) == 1 + len(m.segments)


# -- TUM -------------------------------------------------------------------------

def test_tum_identity_line(tmp_path):
    write_tum(Trajectory([0.0], [RelativePose.identity()]), tmp_path / "a.tum")
    assert (tmp_path / "a.tum").read_text() == "0 0 0 0 0 0 0 1\n"


def test_tum_roundtrip(tmp_path):
    t = _perturbed(_wiggly(4, n=30), 4, 0.3)
    write_tum(t, tmp_path / "a.tum")
    back = read_tum(tmp_path / "a.tum")
    assert np.allclose(back.timestamps, t.timestamps)
    for p, q in zip(t.poses, back.poses):
        assert p.allclose(q, atol=1e-7)


def test_tum_errors(tmp_path):
    (tmp_path / "q.tum").write_text("0 0 0 0 0 0 0 1\n0.1 1 0 0 0 0 0 0.5\n")
    with pytest.raises(UnnormalizedQuaternion) as info:
        read_tum(tmp_path / "q.tum")
    assert info.value.row == 2
    (tmp_path / "m.tum").write_text("0 0 0 0 0 0 1\n")
    with pytest.raises(MalformedLine):
        read_tum(tmp_path / "m.tum")
    (tmp_path / "n.tum").write_text("0 0 0 x 0 0 0 1\n")
    with pytest.raises(MalformedLine):
        read_tum(tmp_path / "n.tum")


def test_tum_normalizes_slightly_off_quaternion(tmp_path):
    (tmp_path / "a.tum").write_text("0 0 0 0 0 0 0 1.0005\n")
    assert np.allclose(read_tum(tmp_path / "a.tum").poses[0].rotation, np.eye(3))


# -- oracle features ---------------------------------------------------------------

def test_oracle_features_identify_points():
    seq, gt = generate_sequence(get_preset("dynamic20"))
    f0 = oracle_features(seq.frames[0], gt.labels[0])
    f1 = oracle_features(seq.frames[1], gt.labels[1])
    assert f0.shape[1] == 10
    common, i0, i1 = np.intersect1d(gt.labels[0].point_id, gt.labels[1].point_id,
                                    return_indices=True)
    assert np.array_equal(f0[i0], f1[i1])
    assert len(np.unique(f0, axis=0)) == len(f0)


def test_oracle_pair_on_turn90():
    from equiro.config import init_params
    from equiro.matching import register_pair
    seq, gt = generate_sequence(get_preset("turn90", noiseless=True))
    cfg = PipelineConfig()
    k = 40
    feats = (oracle_features(seq.frames[k], gt.labels[k]),
             oracle_features(seq.frames[k + 1], gt.labels[k + 1]))
    res = register_pair(seq.frames[k], seq.frames[k + 1], init_params(cfg), cfg.pair_config(),
                        features=feats)
    truth = se3.compose(se3.inverse(gt.poses[k]), gt.poses[k + 1])
    err = se3.compose(se3.inverse(truth), res.sensor_motion)
    assert np.linalg.norm(err.translation) < 1e-3
    assert math.degrees(se3.rotation_angle(err.rotation)) < 0.1


# -- benchmark -------------------------------------------------------------------

def _short(name="straight", frames=25):
    seq, gt = generate_sequence(get_preset(name))
    return (Sequence(seq.frames[:frames], labels=seq.labels[:frames]),
            Trajectory(gt.timestamps[:frames], gt.poses[:frames]))


def test_icp_smoke():
    seq, gt = _short()
    cfg = PipelineConfig()
    cfg.eval.segment_lengths = (5.0, 10.0)
    res = run_benchmark(seq, "icp", cfg, gt=gt)
    assert np.isfinite(res.metrics.t_rel) and np.isfinite(res.metrics.r_rel)
    rec = res.record()
    assert rec["method"] == "icp" and rec["seed"] == 0 and rec["config"]["graph"]["lambda"] == 1.0


def test_benchmark_deterministic_across_threads():
    seq, gt = _short()
    cfg = PipelineConfig()
    cfg.eval.segment_lengths = (5.0,)
    a = run_benchmark(seq, "equi_ro_oracle", cfg, gt=gt, threads=1)
    b = run_benchmark(seq, "equi_ro_oracle", cfg, gt=gt, threads=4)
    assert a.metrics.t_rel == b.metrics.t_rel and a.metrics.r_rel == b.metrics.r_rel
    assert all(np.array_equal(p.matrix(), q.matrix())
               for p, q in zip(a.trajectory.poses, b.trajectory.poses))


def test_failed_pair_falls_back_to_identity():
    seq, gt = _short(frames=6)
    frames = list(seq.frames)
    frames[3] = type(frames[3])(frames[3].timestamp, frames[3].positions[:2],
                                frames[3].doppler[:2], frames[3].rcs[:2])
    res = run_benchmark(Sequence(frames), "equi_ro", PipelineConfig())
    assert {f["pair"] for f in res.failures} == {2, 3}
    assert all(f["stage"] == "ego_velocity" for f in res.failures)
    assert res.trajectory.poses[3].allclose(res.trajectory.poses[2], atol=0)


def test_benchmark_errors():
    seq, _ = _short(frames=3)
    with pytest.raises(UsageError):
        run_benchmark(seq, "magic")
    with pytest.raises(EmptyInput):
        run_benchmark(Sequence(seq.frames[:1]), "icp")
    with pytest.raises(UsageError):
        run_benchmark(Sequence(seq.frames), "equi_ro_oracle")
