"""Composite pose loss with learnable balancing, numeric gradients, toy trainer."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceDetected, EmptyInput, NonFiniteObjective
from .radar_cloud import fmt
from .se3 import RelativePose, euler_from_rotation, wrap_angle

log = logging.getLogger(__name__)


@dataclass
class LossParams:
    s_r: float = 0.0
    s_t: float = 0.0
    s_p: float = 0.0
    s_y: float = 0.0

    @classmethod
    def nal_preset(cls) -> "LossParams":
        """Fixed rotation/translation weights with pitch and yaw terms dropped."""
        return cls(s_r=-8.0, s_t=-3.0, s_p=0.0, s_y=0.0)


@dataclass
class LossBreakdown:
    L_r: float
    L_t: float
    L_p: float
    L_y: float
    total: float
    nal: bool = False


def balanced(loss: float, s: float) -> float:
    return loss * math.exp(-s) + s


def compute_loss(est: RelativePose, gt: RelativePose, p: LossParams | None = None,
                 nal: bool = False) -> LossBreakdown:
    """Rotation, translation, pitch and yaw losses, combined as ``sum L exp(-s) + s``.

    Euler residuals are wrapped into (-pi, pi] per component. With ``nal``
    the pitch and yaw terms are left out of the total.
    """
    p = p or LossParams()
    e = np.array(euler_from_rotation(est.rotation))
    e_gt = np.array(euler_from_rotation(gt.rotation))
    de = wrap_angle(e - e_gt)
    l_r = float(np.linalg.norm(de))
    l_t = float(np.linalg.norm(est.translation - gt.translation))
    l_p = abs(float(de[1]))
    l_y = abs(float(de[2]))
    total = balanced(l_r, p.s_r) + balanced(l_t, p.s_t)
    if not nal:
        total += balanced(l_p, p.s_p) + balanced(l_y, p.s_y)
    return LossBreakdown(l_r, l_t, l_p, l_y, total, nal)


def numeric_gradient(objective, x, h: float = 1e-5) -> np.ndarray:
    """Central differences, step ``h * max(1, |x_i|)`` per coordinate."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        step = h * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        fp, fm = objective(xp), objective(xm)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NonFiniteObjective(f"objective not finite near coordinate {i} = {x[i]}")
        g[i] = (fp - fm) / (2.0 * step)
    return g


# -- toy trainer ---------------------------------------------------------

@dataclass
class TrainConfig:
    trainable: tuple = ("alpha", "beta")
    steps: int = 50
    learning_rate: float = 0.1
    h: float = 1e-5

    def __post_init__(self):
        from .matching import PipelineParams

        self.trainable = tuple(self.trainable)
        bad = set(self.trainable) - set(PipelineParams.SCALARS)
        if bad:
            raise ValueError(f"untrainable parameters {sorted(bad)}; "
                             f"choose from {PipelineParams.SCALARS}")


@dataclass
class TrainResult:
    params: object                 # PipelineParams
    trace: list = field(default_factory=list)   # (step, loss, *param values)
    names: tuple = ()

    @property
    def losses(self) -> list:
        return [row[1] for row in self.trace]

    def write_trace_csv(self, path) -> None:
        lines = [",".join(("step", "loss") + tuple(self.names))]
        for row in self.trace:
            lines.append(",".join([str(row[0])] + [fmt(v) for v in row[1:]]))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def toy_train(pairs: list, params, cfg: TrainConfig | None = None, pair_cfg=None,
              nal: bool = False) -> TrainResult:
    """Gradient descent on a few scalar parameters.

    ``pairs`` holds ``(prev, cur, gt_pose[, features])`` with ``gt_pose`` in
    the prev -> cur direction. Preprocessing and graphs are computed once per
    pair; the network is re-run only when gamma is trainable.
    """
    from .matching import PairConfig, estimate_pose, pair_features, prepare_pair

    cfg = cfg or TrainConfig()
    pair_cfg = pair_cfg or PairConfig()
    if not pairs:
        raise EmptyInput("toy_train needs at least one pair")
    names = cfg.trainable

    prepared = []
    for item in pairs:
        prev, cur, gt = item[:3]
        feats = item[3] if len(item) > 3 else None
        pp = prepare_pair(prev, cur, pair_cfg, build_graphs=feats is None)
        prepared.append((pp, gt, feats))
    cache = {}

    def features(k, pp, fixed, p):
        if fixed is not None:
            return fixed
        key = (k, p.equinet.gamma)
        if key not in cache:
            if len(cache) > 4 * len(prepared):
                cache.clear()
            cache[key] = pair_features(pp, p, pair_cfg)
        return cache[key]

    def objective(vec) -> float:
        p = params.replace(**dict(zip(names, map(float, vec))))
        lp = LossParams(p.s_r, p.s_t, p.s_p, p.s_y)
        total = 0.0
        for k, (pp, gt, fixed) in enumerate(prepared):
            f1, f2 = features(k, pp, fixed, p)
            est = estimate_pose(pp, f1, f2, p, pair_cfg).pose
            total += compute_loss(est, gt, lp, nal).total
        return total / len(prepared)

    x = np.array([params.get(n) for n in names], dtype=float)
    loss0 = objective(x)
    trace = [(0, loss0, *x)]
    over = 0
    for step in range(1, cfg.steps + 1):
        g = numeric_gradient(objective, x, cfg.h)
        x = x - cfg.learning_rate * g
        loss = objective(x)
        trace.append((step, loss, *x))
        over = over + 1 if loss > 10.0 * abs(loss0) else 0
        if over >= 5:
            raise DivergenceDetected(f"loss above 10x initial for 5 steps (step {step}, loss {loss:.3g})")
    log.info("toy_train: loss %.6g -> %.6g over %d steps", loss0, trace[-1][1], cfg.steps)
    return TrainResult(params.replace(**dict(zip(names, map(float, x)))), trace, names)
