"""Embedded property suite run by ``equiro selftest``.

Each property takes a seed and returns ``(ok, detail)``. Components can be
swapped through keyword overrides so a deliberately broken implementation
can be shown to fail.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import se3
from .equinet import (EquiNetConfig, EquiNetParams, dgcnn_forward, egnn_forward, ln_linear,
                      ln_nonlinearity, ln_pool)
from .graph import GraphConfig, build_graph
from .matching import sinkhorn, weighted_svd
from .preprocess import (IrlsConfig, compensate_edge_velocity, compensate_node_velocities,
                         estimate_ego_velocity)
from .radar_cloud import RadarFrame, expected_doppler
from .synth import synthetic_frame


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def rotate_frame(frame: RadarFrame, r: np.ndarray) -> RadarFrame:
    return frame.with_positions(frame.positions @ r.T)


def prop_euler_roundtrip(seed, trials=200):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        e = (rng.uniform(-np.pi, np.pi), rng.uniform(-1.5, 1.5), rng.uniform(-np.pi, np.pi))
        back = se3.euler_from_rotation(se3.rotation_from_euler(e))
        worst = max(worst, float(np.max(np.abs(se3.wrap_angle(np.subtract(back, e))))))
    return worst <= 1e-9, f"max angle error {worst:.3g} rad"


def prop_irls_recovery(seed, trials=20):
    worst = 0.0
    for k in range(trials):
        frame, v, _ = synthetic_frame([seed, k], n_static=60)
        est = estimate_ego_velocity(frame, IrlsConfig())
        worst = max(worst, float(np.linalg.norm(est.v_ego - v)))
    return worst <= 1e-6, f"max |v_hat - v| {worst:.3g} m/s"


def prop_node_invariance(seed, trials=50, compensate=compensate_node_velocities):
    """Compensated velocities depend only on each point's own motion.

    The same moving points are observed after a random sensor rotation and
    with an unrelated sensor velocity; Doppler is re-simulated for both.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        frame, v1, v_abs = synthetic_frame(rng, n_static=20, n_dynamic=20)
        r = se3.random_rotation(rng)
        v2 = rng.normal(0.0, 3.0, 3)
        pos2 = frame.positions @ r.T
        f2 = RadarFrame(0.0, pos2, expected_doppler(pos2, v2, v_abs @ r.T), frame.rcs)
        a = compensate(frame, v1).node_velocity
        b = compensate(f2, v2).node_velocity
        worst = max(worst, float(np.max(np.abs(a - b))))
    return worst <= 1e-9, f"max change {worst:.3g} m/s"


def prop_edge_invariance(seed, trials=50):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        v_abs = rng.normal(0, 3, 3)
        v_ego = rng.normal(0, 3, 3)
        pts = rng.uniform(-30, 30, (2, 3))
        pose = se3.random_pose(rng, 10.0)

        def vij(p, va, ve):
            d = expected_doppler(p, ve, np.tile(va, (2, 1)))
            u = p / np.linalg.norm(p, axis=1, keepdims=True)
            c = d - u @ ve
            return compensate_edge_velocity(p[0], c[0], p[1], c[1])

        a = vij(pts, v_abs, v_ego)
        b = vij(se3.apply(pose, pts), pose.rotation @ v_abs, rng.normal(0, 3, 3))
        worst = max(worst, abs(a - b))
    return worst <= 1e-9, f"max change {worst:.3g} m/s"


def prop_graph_invariance(seed, trials=10):
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        frame, v, _ = synthetic_frame(rng, n_static=50, extent=5.0)
        cf = compensate_node_velocities(frame, v)
        g1 = build_graph(cf, GraphConfig())
        pose = se3.random_pose(rng, 3.0)
        moved = frame.with_positions(se3.apply(pose, frame.positions))
        cf2 = type(cf)(moved, cf.node_velocity, pose.rotation @ v)
        g2 = build_graph(cf2, GraphConfig())
        if g1.edge_set() != g2.edge_set():
            return False, "edge set changed under a rigid transform"
    return True, f"{trials} graphs unchanged"


def prop_layer_equivariance(seed, trials=20):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        v = rng.standard_normal((12, 5, 3))
        w = rng.standard_normal((7, 5))
        k = rng.standard_normal((5, 5))
        nb = rng.integers(0, 12, (12, 3))
        r = se3.random_rotation(rng)
        for f in (lambda x: ln_linear(x, w), lambda x: ln_nonlinearity(x, k),
                  lambda x: ln_pool(x, nb)):
            worst = max(worst, rel_err(f(v @ r.T), f(v) @ r.T))
    return worst <= 1e-6, f"max relative error {worst:.3g}"


def _small_net(seed):
    cfg = EquiNetConfig(dgcnn_widths=(8, 8, 8), egnn_hidden=16, message_dim=8, node_dim=8)
    return cfg, EquiNetParams.init(cfg, seed)


def prop_dgcnn_equivariance(seed, trials=5):
    rng = np.random.default_rng(seed)
    cfg, params = _small_net(seed)
    worst = 0.0
    for _ in range(trials):
        pts = rng.uniform(-10, 10, (40, 3))
        r = se3.random_rotation(rng)
        worst = max(worst, rel_err(dgcnn_forward(pts @ r.T, params, cfg),
                                   dgcnn_forward(pts, params, cfg) @ r.T))
    return worst <= 1e-6, f"max relative error {worst:.3g}"


def prop_egnn_invariance(seed, trials=5):
    rng = np.random.default_rng(seed)
    cfg, params = _small_net(seed)
    worst_x = worst_y = 0.0
    for _ in range(trials):
        frame, v, _ = synthetic_frame(rng, n_static=40, extent=6.0)
        g = build_graph(compensate_node_velocities(frame, v))
        r = se3.random_rotation(rng)
        xp = dgcnn_forward(g.X, params, cfg)
        x1, y1 = egnn_forward(xp, g.Y, g.Z, g, params, cfg)
        x2, y2 = egnn_forward(xp @ r.T, g.Y, g.Z, g, params, cfg)
        worst_x = max(worst_x, rel_err(x2, x1 @ r.T))
        worst_y = max(worst_y, rel_err(y2, y1))
    return max(worst_x, worst_y) <= 1e-6, f"X_F {worst_x:.3g}, Y_F {worst_y:.3g}"


def prop_sinkhorn(seed, trials=20):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        w = sinkhorn(rng.uniform(0.05, 1.0, (16, 16)), 10)
        worst = max(worst, float(np.max(np.abs(w.sum(0) - 1))), float(np.max(np.abs(w.sum(1) - 1))))
    return worst <= 1e-6, f"max marginal error {worst:.3g}"


def prop_svd_recovery(seed, trials=50):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        p = rng.uniform(-10, 10, (20, 3))
        pose = se3.random_pose(rng, 5.0)
        est = weighted_svd(p, se3.apply(pose, p), np.eye(20) / 20)
        worst = max(worst, float(np.max(np.abs(est.rotation - pose.rotation))),
                    float(np.max(np.abs(est.translation - pose.translation))))
    return worst <= 1e-6, f"max error {worst:.3g}"


PROPERTIES = {
    "euler_roundtrip": prop_euler_roundtrip,
    "irls_static_recovery": prop_irls_recovery,
    "node_velocity_invariance": prop_node_invariance,
    "edge_velocity_invariance": prop_edge_invariance,
    "graph_rigid_invariance": prop_graph_invariance,
    "ln_layer_equivariance": prop_layer_equivariance,
    "dgcnn_equivariance": prop_dgcnn_equivariance,
    "egnn_equivariance_invariance": prop_egnn_invariance,
    "sinkhorn_doubly_stochastic": prop_sinkhorn,
    "weighted_svd_recovery": prop_svd_recovery,
}


@dataclass
class PropertyResult:
    name: str
    ok: bool
    detail: str
    seconds: float


def run_selftest(seed: int = 0, overrides: dict | None = None) -> list:
    """Run every property; ``overrides`` maps property name -> kwargs."""
    overrides = overrides or {}
    out = []
    for name, prop in PROPERTIES.items():
        t0 = time.perf_counter()
        try:
            ok, detail = prop(seed, **overrides.get(name, {}))
        except Exception as exc:  # a crashing property is a failing property
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(PropertyResult(name, bool(ok), detail, time.perf_counter() - t0))
    return out
