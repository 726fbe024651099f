"""Doppler ego-velocity estimation and velocity compensation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePair, RankDeficient, TooFewPoints
from .radar_cloud import RadarFrame

log = logging.getLogger(__name__)

RANK_TOL = 1e-10
DEGENERATE_SEP = 1e-6


@dataclass
class IrlsConfig:
    epsilon: float = 1e-5
    max_iterations: int = 20
    convergence_tol: float = 1e-8

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be > 0")


@dataclass
class EgoVelocityEstimate:
    v_ego: np.ndarray
    weights: np.ndarray
    residuals: np.ndarray
    iterations_used: int
    converged: bool
    # robust objective sum_i phi(r_i) after each solve, phi(r) = r - eps*log(1 + r/eps)
    objective_trace: list = field(default_factory=list)


def smoothed_l1(residuals, eps: float) -> float:
    """Objective that the 1/(|r|+eps) reweighting provably does not increase."""
    r = np.abs(residuals)
    return float(np.sum(r - eps * np.log1p(r / eps)))


def _weighted_solve(u, d, w):
    a = u.T @ (w[:, None] * u)
    b = u.T @ (w * d)
    return np.linalg.solve(a, b)


def estimate_ego_velocity(frame: RadarFrame, cfg: IrlsConfig | None = None) -> EgoVelocityEstimate:
    """Robust sensor velocity from per-point Doppler by IRLS.

    Each step solves the weighted normal equations with weights
    ``1 / (|r_i| + epsilon)`` taken from the previous iterate; the first
    solve is unweighted.
    """
    cfg = cfg or IrlsConfig()
    n = len(frame)
    if n < 3:
        raise TooFewPoints(f"ego-velocity needs >= 3 points, got {n}")
    u = frame.directions
    d = frame.doppler
    sv = np.linalg.svd(u, compute_uv=False)
    if sv[-1] <= RANK_TOL:
        raise RankDeficient(
            f"direction matrix has rank < 3 (smallest singular value {sv[-1]:.3g}); "
            "ego-velocity is not unique")

    v = _weighted_solve(u, d, np.ones(n))
    r = np.abs(d - u @ v)
    trace = [smoothed_l1(r, cfg.epsilon)]
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        w = 1.0 / (r + cfg.epsilon)
        v_new = _weighted_solve(u, d, w)
        step = np.linalg.norm(v_new - v)
        v = v_new
        r = np.abs(d - u @ v)
        trace.append(smoothed_l1(r, cfg.epsilon))
        if step < cfg.convergence_tol:
            converged = True
            break
    return EgoVelocityEstimate(
        v_ego=v,
        weights=1.0 / (r + cfg.epsilon),
        residuals=r,
        iterations_used=it,
        converged=converged,
        objective_trace=trace,
    )


@dataclass(frozen=True, eq=False)
class CompensatedFrame:
    frame: RadarFrame
    node_velocity: np.ndarray
    v_ego: np.ndarray
    # NIV ablation: node_velocity is the raw Doppler, edges use plain differences
    niv: bool = False

    def __post_init__(self):
        if len(self.node_velocity) != len(self.frame):
            raise ValueError("node_velocity length must equal point count")


def compensate_node_velocities(frame: RadarFrame, v_ego, niv: bool = False) -> CompensatedFrame:
    v_ego = np.asarray(v_ego, dtype=float)
    if not np.isfinite(v_ego).all():
        raise ValueError("v_ego must be finite")
    if niv:
        vel = frame.doppler.copy()
    elif len(frame):
        vel = frame.doppler - frame.directions @ v_ego
    else:
        vel = np.zeros(0)
    vel.setflags(write=False)
    return CompensatedFrame(frame, vel, v_ego, niv)


def compensate_edge_velocity(rho_i, v_i, rho_j, v_j, degenerate_sep: float = DEGENERATE_SEP) -> float:
    """Relative edge velocity of two compensated nodes.

    ``(v_i |rho_i| - v_j |rho_j|) / |rho_i - rho_j|``. For a co-moving pair
    with shared absolute velocity ``v`` this equals
    ``v . (rho_j - rho_i) / |rho_j - rho_i|`` (see :func:`rigid_edge_velocity`).
    """
    rho_i = np.asarray(rho_i, dtype=float)
    rho_j = np.asarray(rho_j, dtype=float)
    sep = np.linalg.norm(rho_i - rho_j)
    if sep <= degenerate_sep:
        raise DegeneratePair(f"nodes closer than {degenerate_sep} m (separation {sep:.3g})")
    return float((v_i * np.linalg.norm(rho_i) - v_j * np.linalg.norm(rho_j)) / sep)


def edge_velocities(cf: CompensatedFrame, edges: np.ndarray,
                    degenerate_sep: float = DEGENERATE_SEP) -> np.ndarray:
    """Vectorized edge velocity for an (E, 2) index array, oriented i -> j."""
    edges = np.asarray(edges, dtype=int).reshape(-1, 2)
    if len(edges) == 0:
        return np.zeros(0)
    i, j = edges[:, 0], edges[:, 1]
    v = cf.node_velocity
    if cf.niv:
        return v[i] - v[j]
    pos = cf.frame.positions
    sep = np.linalg.norm(pos[i] - pos[j], axis=1)
    bad = sep <= degenerate_sep
    if bad.any():
        k = int(np.argmax(bad))
        raise DegeneratePair(f"edge ({i[k]}, {j[k]}) joins nodes closer than {degenerate_sep} m")
    rng = np.linalg.norm(pos, axis=1)
    return (v[i] * rng[i] - v[j] * rng[j]) / sep


def rigid_edge_velocity(v_abs, rho_i, rho_j) -> float:
    """Closed form of the edge velocity when both nodes share ``v_abs``.

    Under the positive-approaching Doppler sign this is the projection of
    ``v_abs`` on the unit vector from node i to node j.
    """
    rel = np.asarray(rho_j, dtype=float) - np.asarray(rho_i, dtype=float)
    return float(np.dot(v_abs, rel) / np.linalg.norm(rel))


def translate_prev_frame(prev: RadarFrame, v_ego, dt: float) -> RadarFrame:
    """Shift the previous frame by the displacement predicted from ``v_ego``."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    shift = np.asarray(v_ego, dtype=float) * dt
    if len(prev) == 0:
        return prev
    return prev.with_positions(prev.positions - shift)
