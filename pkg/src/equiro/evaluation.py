"""Trajectory metrics, TUM I/O, oracle features and the benchmark runner."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import se3
from .errors import (DataError, EmptyInput, MalformedLine, SegmentTooLong, StageError,
                     TimestampMismatch, UnnormalizedQuaternion, UsageError)
from .radar_cloud import RadarFrame, Sequence, fmt
from .se3 import RelativePose

log = logging.getLogger(__name__)

DEFAULT_SEGMENTS = (10.0, 20.0, 30.0, 40.0)
METHODS = ("equi_ro", "equi_ro_oracle", "icp")


@dataclass
class Trajectory:
    timestamps: np.ndarray
    poses: list   # RelativePose from the trajectory origin

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        if len(self.timestamps) != len(self.poses):
            raise DataError("trajectory needs one timestamp per pose")
        if np.any(np.diff(self.timestamps) <= 0):
            raise DataError("trajectory timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)

    def rebased(self) -> "Trajectory":
        """Same motion expressed relative to the first pose."""
        if not self.poses:
            return self
        inv0 = se3.inverse(self.poses[0])
        return Trajectory(self.timestamps.copy(), [se3.compose(inv0, p) for p in self.poses])

    def transformed(self, t: RelativePose) -> "Trajectory":
        return Trajectory(self.timestamps.copy(), [se3.compose(t, p) for p in self.poses])

    def path_lengths(self) -> np.ndarray:
        xyz = np.array([p.translation for p in self.poses]).reshape(-1, 3)
        steps = np.linalg.norm(np.diff(xyz, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(steps)])


# -- TUM files -----------------------------------------------------------

def write_tum(traj: Trajectory, path) -> None:
    lines = []
    for ts, p in zip(traj.timestamps, traj.poses):
        q = se3.matrix_to_quat(p.rotation)
        vals = [ts, *p.translation, *q]
        lines.append(" ".join(fmt(v) for v in vals))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_tum(path, quat_tol: float = 1e-3) -> Trajectory:
    ts, poses = [], []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            vals = [float(x) for x in parts]
        except ValueError:
            raise MalformedLine(n, "non-numeric field", path=path) from None
        if len(vals) != 8 or not all(map(math.isfinite, vals)):
            raise MalformedLine(n, "expected 8 finite fields", path=path)
        q = np.array(vals[4:8])
        qn = np.linalg.norm(q)
        if abs(qn - 1.0) > quat_tol:
            raise UnnormalizedQuaternion(n, f"norm {qn:.6g}", path=path)
        ts.append(vals[0])
        poses.append(RelativePose(se3.quat_to_matrix(q / qn), vals[1:4]))
    return Trajectory(np.array(ts), poses)


# -- relative errors -----------------------------------------------------

@dataclass
class TrajectoryMetrics:
    t_rel: float   # percent
    r_rel: float   # degrees per meter
    segments: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"t_rel_percent": self.t_rel, "r_rel_deg_per_m": self.r_rel,
                "segment_count": len(self.segments)}


def associate(est: Trajectory, gt: Trajectory) -> np.ndarray:
    """Index of the nearest estimate for every ground-truth timestamp."""
    if len(gt) < 2:
        raise TimestampMismatch("ground truth needs at least two poses")
    half = 0.5 * float(np.median(np.diff(gt.timestamps)))
    idx = np.searchsorted(est.timestamps, gt.timestamps)
    lo = np.clip(idx - 1, 0, len(est) - 1)
    hi = np.clip(idx, 0, len(est) - 1)
    pick = np.where(np.abs(est.timestamps[lo] - gt.timestamps)
                    <= np.abs(est.timestamps[hi] - gt.timestamps), lo, hi)
    gap = np.abs(est.timestamps[pick] - gt.timestamps)
    if np.any(gap > half):
        k = int(np.argmax(gap > half))
        raise TimestampMismatch(f"no estimate within {half:.4g} s of ground-truth time "
                                f"{gt.timestamps[k]:.6f}")
    return pick


def relative_errors(est: Trajectory, gt: Trajectory, segment_lengths=DEFAULT_SEGMENTS,
                    step: int = 1) -> TrajectoryMetrics:
    """Segment-based relative translation (%) and rotation (deg/m) errors.

    For each start frame and length L the segment ends at the first frame
    whose ground-truth path length from the start reaches L. Errors are
    normalized by L and averaged over all segments of all lengths.
    """
    pick = associate(est, gt)
    est_p = [est.poses[k] for k in pick]
    dist = gt.path_lengths()
    records = []
    for length in segment_lengths:
        fits = False
        for i in range(0, len(gt), step):
            target = dist[i] + length - 1e-9 * max(1.0, length)
            j = int(np.searchsorted(dist, target, side="left"))
            if j >= len(gt):
                break
            fits = True
            d_gt = se3.compose(se3.inverse(gt.poses[i]), gt.poses[j])
            d_est = se3.compose(se3.inverse(est_p[i]), est_p[j])
            err = se3.compose(se3.inverse(d_gt), d_est)
            records.append({
                "start": i, "end": j, "length": float(length),
                "t_err_percent": float(np.linalg.norm(err.translation) / length * 100.0),
                "r_err_deg_per_m": math.degrees(se3.rotation_angle(err.rotation)) / length,
            })
        if not fits:
            raise SegmentTooLong(length, float(dist[-1]))
    t = float(np.mean([r["t_err_percent"] for r in records]))
    r = float(np.mean([r["r_err_deg_per_m"] for r in records]))
    return TrajectoryMetrics(t, r, records)


def write_segments_csv(metrics: TrajectoryMetrics, path) -> None:
    lines = ["start,end,length,t_err_percent,r_err_deg_per_m"]
    for s in metrics.segments:
        lines.append(f"{s['start']},{s['end']},{fmt(s['length'])},"
                     f"{fmt(s['t_err_percent'])},{fmt(s['r_err_deg_per_m'])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- oracle features -----------------------------------------------------

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK
        z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK
        z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK
        return z ^ (z >> np.uint64(31))


def oracle_features(frame: RadarFrame, labels, dim: int = 8, scale: float = 100.0) -> np.ndarray:
    """Per-point descriptors from invariant ground-truth quantities.

    A hash of the point id gives ``dim`` values in ``[0, scale)``; the true
    absolute speed and true RCS follow. The same physical point therefore
    gets identical features in every frame.
    """
    ids = np.asarray(labels.point_id).astype(np.uint64)
    cols = []
    for c in range(dim):
        h = _splitmix64(ids * np.uint64(dim) + np.uint64(c))
        cols.append((h >> np.uint64(11)).astype(float) / float(1 << 53) * scale)
    speed = np.linalg.norm(labels.v_abs, axis=1)
    return np.column_stack(cols + [speed, labels.rcs_true]) if len(ids) else np.zeros((0, dim + 2))


# -- benchmark -----------------------------------------------------------

@dataclass
class BenchmarkResult:
    method: str
    trajectory: Trajectory
    metrics: TrajectoryMetrics | None
    failures: list
    diagnostics: list
    config: dict

    def record(self) -> dict:
        return {
            "method": self.method,
            "config": self.config,
            "seed": self.config.get("seed"),
            "pairs": len(self.trajectory) - 1,
            "failures": len(self.failures),
            "failure_detail": self.failures,
            "metrics": self.metrics.as_dict() if self.metrics else None,
        }


def run_benchmark(sequence: Sequence, method: str, config=None, params=None,
                  gt: Trajectory | None = None, threads: int | None = 1) -> BenchmarkResult:
    """Register every consecutive pair, accumulate, and score against ``gt``.

    A failed pair contributes an identity motion and is listed in
    ``failures`` so metrics stay computable.
    """
    from .config import PipelineConfig, init_params
    from .matching import icp_register, register_pair, accumulate_odometry

    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {METHODS}")
    if len(sequence) < 2:
        raise EmptyInput("benchmark needs a sequence of at least two frames")
    config = config or PipelineConfig()
    pair_cfg = config.pair_config()
    if method == "equi_ro":
        params = params or init_params(config)
    elif method == "equi_ro_oracle":
        params = params or init_params(config)
        if sequence.labels is None:
            raise UsageError("equi_ro_oracle needs simulator labels in the sequence")

    def run(k):
        prev, cur = sequence.frames[k], sequence.frames[k + 1]
        try:
            if method == "icp":
                res = icp_register(prev, cur, config.icp)
                return se3.inverse(res.pose), {"converged": res.converged,
                                               "iterations": res.iterations, "rmse": res.rmse}, None
            feats = None
            if method == "equi_ro_oracle":
                feats = (oracle_features(prev, sequence.labels[k]),
                         oracle_features(cur, sequence.labels[k + 1]))
            res = register_pair(prev, cur, params, pair_cfg, features=feats)
            return res.sensor_motion, res.diagnostics, None
        except StageError as exc:
            return RelativePose.identity(), {}, {"pair": k, "stage": exc.stage, "error": str(exc)}
        except DataError as exc:
            return RelativePose.identity(), {}, {"pair": k, "stage": "input", "error": str(exc)}

    pairs = range(len(sequence) - 1)
    if threads == 1:
        results = [run(k) for k in pairs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, pairs))
    motions = [r[0] for r in results]
    diagnostics = [dict(pair=k, **r[1]) for k, r in enumerate(results)]
    failures = [r[2] for r in results if r[2] is not None]
    for f in failures:
        log.warning("pair %d failed at %s: %s", f["pair"], f["stage"], f["error"])
    traj = accumulate_odometry(motions, sequence.timestamps)
    metrics = None
    if gt is not None:
        metrics = relative_errors(traj, gt.rebased(), config.eval.segment_lengths)
    return BenchmarkResult(method, traj, metrics, failures, diagnostics, config.to_dict())
