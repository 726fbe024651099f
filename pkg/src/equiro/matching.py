"""Keypoint correspondence, soft assignment, and rigid transform estimation.

Pose direction: :func:`register_pair` and :func:`icp_register` return the
transform taking previous-frame coordinates into current-frame coordinates
(``x_cur = R x_prev + t``). The sensor's own motion between the frames is
the inverse of that transform; :func:`accumulate_odometry` folds sensor
motions.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from . import se3
from .equinet import EquiNetConfig, EquiNetParams, equinet_forward
from .errors import (DegenerateGeometry, DegenerateMatrix, EmptyInput, EquiROError,
                     StageError, TooFewPoints)
from .graph import GraphConfig, RadarGraph, build_graph
from .preprocess import (CompensatedFrame, EgoVelocityEstimate, IrlsConfig,
                         compensate_node_velocities, estimate_ego_velocity,
                         translate_prev_frame)
from .radar_cloud import RadarFrame
from .se3 import RelativePose

log = logging.getLogger(__name__)

_MAX_EXP = np.log(np.finfo(float).max)


@dataclass
class MatchConfig:
    M: int = 64
    K: int = 10
    alpha: float = 0.5
    beta: float = 1.0
    sinkhorn_floor: float = 1e-9

    def __post_init__(self):
        if self.M < 3:
            raise ValueError("M must be >= 3")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not np.isfinite(self.beta):
            raise ValueError("beta must be finite")
        if not self.sinkhorn_floor > 0:
            raise ValueError("sinkhorn_floor must be > 0")


@dataclass
class CorrespondenceSet:
    source: np.ndarray     # (M,) indices into frame 1, in selection order
    target: np.ndarray     # (M,) indices into frame 2
    distances: np.ndarray  # (M, M) feature distances between selected source and target


def select_correspondences(f1: np.ndarray, f2: np.ndarray, m: int) -> CorrespondenceSet:
    """Greedy globally-smallest feature-distance pairs with unique indices on both sides."""
    f1 = np.asarray(f1, dtype=float)
    f2 = np.asarray(f2, dtype=float)
    if len(f1) < m or len(f2) < m:
        raise TooFewPoints(f"need >= {m} points per frame, got {len(f1)} and {len(f2)}")
    d = cdist(f1, f2)
    n2 = d.shape[1]
    order = np.argsort(d, axis=None, kind="stable")
    used1 = np.zeros(len(f1), dtype=bool)
    used2 = np.zeros(n2, dtype=bool)
    src, tgt = [], []
    for flat in order:
        a, b = divmod(int(flat), n2)
        if used1[a] or used2[b]:
            continue
        used1[a] = used2[b] = True
        src.append(a)
        tgt.append(b)
        if len(src) == m:
            break
    src = np.array(src)
    tgt = np.array(tgt)
    return CorrespondenceSet(src, tgt, d[np.ix_(src, tgt)])


def similarity(d: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    """Elementwise ``exp(-beta * (d - alpha))``, clamped below overflow."""
    e = -beta * (np.asarray(d, dtype=float) - alpha)
    if np.any(e > _MAX_EXP):
        log.warning("similarity: exponent overflow clamped in %d entries", int(np.sum(e > _MAX_EXP)))
        e = np.minimum(e, _MAX_EXP)
    return np.exp(e)


def sinkhorn(s: np.ndarray, k: int, floor: float | None = 1e-9) -> np.ndarray:
    """Alternate row then column normalization, ``k`` full rounds.

    Entries are floored at ``floor`` first; with ``floor`` None or 0 an
    all-zero row or column raises :class:`DegenerateMatrix`.
    """
    w = np.array(s, dtype=float)
    if np.any(w < 0) or not np.isfinite(w).all():
        raise DegenerateMatrix("similarity entries must be finite and >= 0")
    if floor:
        w = np.maximum(w, floor)
    elif not (w.sum(axis=1) > 0).all() or not (w.sum(axis=0) > 0).all():
        raise DegenerateMatrix("all-zero row or column and flooring disabled")
    for _ in range(k):
        w /= w.sum(axis=1, keepdims=True)
        w /= w.sum(axis=0, keepdims=True)
    return w


def weighted_svd(p: np.ndarray, q: np.ndarray, w: np.ndarray, tol: float = 1e-10) -> RelativePose:
    """Rigid transform minimizing ``sum_ij w_ij |R p_i + t - q_j|^2``.

    Rotation comes from the SVD of the weighted cross-covariance with a
    determinant correction, so the result is never a reflection.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    w = np.asarray(w, dtype=float)
    total = w.sum()
    if not total > 0:
        raise DegenerateGeometry("total correspondence weight must be > 0")
    rows = w.sum(axis=1)
    cols = w.sum(axis=0)
    pbar = rows @ p / total
    qbar = cols @ q / total
    h = (p - pbar).T @ w @ (q - qbar)
    u, sv, vt = np.linalg.svd(h)
    if sv[1] <= tol * max(1.0, sv[0]):
        raise DegenerateGeometry(
            f"cross-covariance rank < 2 (singular values {sv[0]:.3g}, {sv[1]:.3g}); "
            "rotation not identifiable")
    v = vt.T
    d = np.sign(np.linalg.det(v @ u.T)) or 1.0
    r = v @ np.diag([1.0, 1.0, d]) @ u.T
    return RelativePose(r, qbar - r @ pbar)


def assignment_entropy(w: np.ndarray) -> float:
    """Mean row entropy (nats) of the assignment matrix."""
    pw = w / w.sum(axis=1, keepdims=True)
    return float(-np.sum(pw * np.log(np.maximum(pw, 1e-300))) / len(w))


# -- full pair pipeline --------------------------------------------------

@dataclass
class PipelineParams:
    """Everything learnable: network weights plus the scalar parameters."""

    equinet: EquiNetParams
    alpha: float = 0.5
    beta: float = 1.0
    s_r: float = 0.0
    s_t: float = 0.0
    s_p: float = 0.0
    s_y: float = 0.0

    SCALARS = ("alpha", "beta", "gamma", "s_r", "s_t", "s_p", "s_y")

    def get(self, name: str) -> float:
        return self.equinet.gamma if name == "gamma" else getattr(self, name)

    def replace(self, **values) -> "PipelineParams":
        gamma = values.pop("gamma", None)
        eq = self.equinet if gamma is None else self.equinet.with_gamma(gamma)
        return dataclasses.replace(self, equinet=eq, **values)


@dataclass
class PairConfig:
    irls: IrlsConfig = field(default_factory=IrlsConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    equinet: EquiNetConfig = field(default_factory=EquiNetConfig)
    matching: MatchConfig = field(default_factory=MatchConfig)
    niv: bool = False


@dataclass
class PreparedPair:
    """Everything upstream of the learnable stages."""

    ego_prev: EgoVelocityEstimate
    ego_cur: EgoVelocityEstimate
    shift: np.ndarray             # v_ego * dt subtracted from the previous frame
    prev_positions: np.ndarray    # translated previous-frame coordinates
    comp_prev: CompensatedFrame   # compensation uses the measured geometry
    comp_cur: CompensatedFrame
    graph_prev: RadarGraph | None = None
    graph_cur: RadarGraph | None = None


@dataclass
class PairResult:
    pose: RelativePose           # previous-frame coords -> current-frame coords
    sensor_motion: RelativePose  # current sensor pose expressed in the previous frame
    diagnostics: dict


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except (EquiROError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def prepare_pair(prev: RadarFrame, cur: RadarFrame, cfg: PairConfig,
                 build_graphs: bool = True) -> PreparedPair:
    """Ego-velocity, compensation, translation alignment and graphs.

    Y and Z of the previous graph come from the measured geometry (they are
    invariant anyway); its X holds the translated coordinates.
    """
    ego_prev = _stage("ego_velocity", estimate_ego_velocity, prev, cfg.irls)
    ego_cur = _stage("ego_velocity", estimate_ego_velocity, cur, cfg.irls)
    dt = cur.timestamp - prev.timestamp
    moved = _stage("translate", translate_prev_frame, prev, ego_prev.v_ego, dt)
    comp_prev = _stage("compensate", compensate_node_velocities, prev, ego_prev.v_ego, cfg.niv)
    comp_cur = _stage("compensate", compensate_node_velocities, cur, ego_cur.v_ego, cfg.niv)
    pp = PreparedPair(ego_prev, ego_cur, ego_prev.v_ego * dt, moved.positions, comp_prev, comp_cur)
    if build_graphs:
        g = _stage("graph", build_graph, comp_prev, cfg.graph)
        pp.graph_prev = dataclasses.replace(g, X=moved.positions.copy())
        pp.graph_cur = _stage("graph", build_graph, comp_cur, cfg.graph)
    return pp


def pair_features(pp: PreparedPair, params: PipelineParams, cfg: PairConfig):
    f1 = _stage("equinet", equinet_forward, pp.graph_prev, params.equinet, cfg.equinet)
    f2 = _stage("equinet", equinet_forward, pp.graph_cur, params.equinet, cfg.equinet)
    return f1, f2


def estimate_pose(pp: PreparedPair, f1, f2, params: PipelineParams, cfg: PairConfig) -> PairResult:
    mc = cfg.matching
    corr = _stage("matching", select_correspondences, f1, f2, mc.M)
    s = similarity(corr.distances, params.alpha, params.beta)
    w = _stage("sinkhorn", sinkhorn, s, mc.K, mc.sinkhorn_floor)
    p = pp.prev_positions[corr.source]
    q = pp.comp_cur.frame.positions[corr.target]
    aligned = _stage("weighted_svd", weighted_svd, p, q, w)
    # re-add the translation pre-compensation: x_cur = R (x_prev - shift) + t'
    pose = RelativePose(aligned.rotation, aligned.translation - aligned.rotation @ pp.shift)
    resid = np.linalg.norm(se3.apply(aligned, p) - q, axis=1)
    motion = se3.inverse(pose)
    diag = {
        "v_ego_prev": pp.ego_prev.v_ego.tolist(),
        "v_ego_cur": pp.ego_cur.v_ego.tolist(),
        "irls_converged": bool(pp.ego_prev.converged and pp.ego_cur.converged),
        "inlier_residuals": resid.tolist(),
        "assignment_entropy": assignment_entropy(w),
        "pose_prev_to_cur": pose.matrix().tolist(),
        "sensor_motion": motion.matrix().tolist(),
    }
    if pp.graph_prev is not None:
        diag["edges"] = [pp.graph_prev.edge_count, pp.graph_cur.edge_count]
    return PairResult(pose, motion, diag)


def register_pair(prev: RadarFrame, cur: RadarFrame, params: PipelineParams,
                  cfg: PairConfig | None = None, features=None) -> PairResult:
    """Full pipeline on one frame pair.

    ``features`` may supply ``(F_prev, F_cur)`` directly (e.g. simulator
    oracle features), bypassing graph construction and the network.
    """
    cfg = cfg or PairConfig()
    pp = prepare_pair(prev, cur, cfg, build_graphs=features is None)
    f1, f2 = pair_features(pp, params, cfg) if features is None else features
    return estimate_pose(pp, f1, f2, params, cfg)


# -- ICP baseline --------------------------------------------------------

@dataclass
class IcpConfig:
    max_iterations: int = 50
    tolerance: float = 1e-8           # pose-delta norm
    max_correspondence_distance: float = 5.0  # m


@dataclass
class IcpResult:
    pose: RelativePose
    iterations: int
    converged: bool
    rmse: float


def icp_register(prev: RadarFrame, cur: RadarFrame, cfg: IcpConfig | None = None) -> IcpResult:
    """Point-to-point ICP from the identity; returns prev -> cur.

    Non-convergence is not raised: the best estimate so far comes back with
    ``converged=False``.
    """
    cfg = cfg or IcpConfig()
    if len(prev) == 0 or len(cur) == 0:
        raise EmptyInput("ICP needs non-empty frames")
    src = prev.positions
    tree = cKDTree(cur.positions)
    pose = RelativePose.identity()
    rmse = np.inf
    for it in range(1, cfg.max_iterations + 1):
        moved = se3.apply(pose, src)
        dist, idx = tree.query(moved, distance_upper_bound=cfg.max_correspondence_distance)
        ok = np.isfinite(dist)
        if ok.sum() < 3:
            log.warning("ICP: fewer than 3 correspondences at iteration %d", it)
            return IcpResult(pose, it, False, rmse)
        rmse = float(np.sqrt(np.mean(dist[ok] ** 2)))
        n = int(ok.sum())
        try:
            delta = weighted_svd(moved[ok], cur.positions[idx[ok]], np.eye(n) / n)
        except DegenerateGeometry:
            return IcpResult(pose, it, False, rmse)
        pose = se3.compose(delta, pose)
        step = np.linalg.norm(delta.rotation - np.eye(3)) + np.linalg.norm(delta.translation)
        if step < cfg.tolerance:
            return IcpResult(pose, it, True, rmse)
    log.info("ICP: no convergence after %d iterations", cfg.max_iterations)
    return IcpResult(pose, cfg.max_iterations, False, rmse)


# -- odometry ------------------------------------------------------------

def accumulate_odometry(motions: list, timestamps=None):
    """Left-fold sensor motions into poses from the origin.

    Returns a Trajectory with ``len(motions) + 1`` poses, the first identity.
    """
    from .evaluation import Trajectory

    if not motions:
        raise EmptyInput("accumulate_odometry needs at least one relative pose")
    poses = [RelativePose.identity()]
    for m in motions:
        poses.append(se3.compose(poses[-1], m))
    if timestamps is None:
        timestamps = np.arange(len(poses), dtype=float)
    return Trajectory(np.asarray(timestamps, dtype=float), poses)
