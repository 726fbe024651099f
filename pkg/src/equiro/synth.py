"""Synthetic 4D radar scenes with exact Doppler physics.

The sensor frame is x forward, y left, z up; the sensor sits at the vehicle's
rotation center and its yaw follows the direction of travel, so its
sensor-frame velocity is always ``(speed, 0, 0)``. Noise is added after the
exact physics, in spherical coordinates (range, azimuth, elevation).
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, UnknownPreset
from .radar_cloud import RadarFrame, Sequence, expected_doppler, fmt
from .se3 import RelativePose, rot_z

log = logging.getLogger(__name__)


@dataclass
class DynamicObject:
    position: list          # world position at t = 0, m
    velocity: list          # constant world velocity, m/s
    rcs: float = 10.0
    n_points: int = 5
    extent: float = 1.0     # points are spread in a cube of this side length, m


@dataclass
class MotionSegment:
    duration: float         # s
    speed: float            # m/s along the heading
    yaw_rate: float = 0.0   # rad/s


@dataclass
class Noise:
    range_sigma: float = 0.0    # m
    angle_sigma: float = 0.0    # rad, azimuth and elevation
    doppler_sigma: float = 0.0  # m/s
    rcs_sigma: float = 0.0      # dBsm


@dataclass
class SceneSpec:
    landmarks: list                       # (L, 3) world positions, m
    landmark_rcs: list                    # (L,) dBsm
    segments: list                        # MotionSegment
    dynamic_objects: list = field(default_factory=list)
    fov_azimuth_deg: float = 60.0         # half-angle
    fov_elevation_deg: float = 15.0       # half-angle
    max_range: float = 50.0
    min_range: float = 0.5
    frame_rate: float = 10.0              # Hz
    noise: Noise = field(default_factory=Noise)
    seed: int = 0

    def __post_init__(self):
        self.segments = [s if isinstance(s, MotionSegment) else MotionSegment(**s)
                         for s in self.segments]
        self.dynamic_objects = [o if isinstance(o, DynamicObject) else DynamicObject(**o)
                                for o in self.dynamic_objects]
        if isinstance(self.noise, dict):
            self.noise = Noise(**self.noise)
        if not self.max_range > 0 or not self.frame_rate > 0:
            raise ValueError("max_range and frame_rate must be > 0")
        if min(dataclasses.astuple(self.noise)) < 0:
            raise ValueError("noise sigmas must be >= 0")
        if len(self.landmarks) != len(self.landmark_rcs):
            raise ValueError("landmarks and landmark_rcs differ in length")

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["landmarks"] = np.asarray(self.landmarks, dtype=float).tolist()
        d["landmark_rcs"] = np.asarray(self.landmark_rcs, dtype=float).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SceneSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise DataError(f"cannot read scene spec {path}: {exc}") from exc


@dataclass
class PointLabels:
    point_id: np.ndarray    # unique per physical point across the sequence
    source_id: np.ndarray   # -1 static world, else dynamic object index
    dynamic: np.ndarray
    v_abs: np.ndarray       # (N, 3) sensor frame, m/s
    rcs_true: np.ndarray


@dataclass
class GroundTruth:
    timestamps: np.ndarray
    poses: list             # world <- sensor, RelativePose
    v_ego: list             # sensor-frame velocity per frame
    labels: list            # PointLabels per frame

    def trajectory(self):
        from .evaluation import Trajectory
        return Trajectory(self.timestamps.copy(), list(self.poses))


def sensor_state(spec: SceneSpec, t: float):
    """World position, yaw and speed at time ``t`` (constant-rate arcs)."""
    pos = np.zeros(3)
    yaw = 0.0
    speed = spec.segments[0].speed if spec.segments else 0.0
    remaining = t
    for seg in spec.segments:
        tau = min(remaining, seg.duration)
        speed = seg.speed
        w = seg.yaw_rate
        if abs(w) > 1e-12:
            y1 = yaw + w * tau
            pos = pos + seg.speed / w * np.array([math.sin(y1) - math.sin(yaw),
                                                  math.cos(yaw) - math.cos(y1), 0.0])
            yaw = y1
        else:
            pos = pos + seg.speed * tau * np.array([math.cos(yaw), math.sin(yaw), 0.0])
        remaining -= tau
        if remaining <= 0:
            break
    return pos, yaw, speed


def _object_offsets(spec: SceneSpec) -> list:
    rng = np.random.default_rng([spec.seed, 7919])
    return [rng.uniform(-0.5, 0.5, (o.n_points, 3)) * o.extent for o in spec.dynamic_objects]


def generate_frame(spec: SceneSpec, k: int, offsets=None):
    t = k / spec.frame_rate
    pos, yaw, speed = sensor_state(spec, t)
    rot = rot_z(yaw)
    lm = np.asarray(spec.landmarks, dtype=float).reshape(-1, 3)
    n_lm = len(lm)
    offsets = _object_offsets(spec) if offsets is None else offsets

    world = [lm]
    vel = [np.zeros_like(lm)]
    rcs = [np.asarray(spec.landmark_rcs, dtype=float)]
    pid = [np.arange(n_lm)]
    src = [np.full(n_lm, -1)]
    next_id = n_lm
    for o_idx, (obj, off) in enumerate(zip(spec.dynamic_objects, offsets)):
        v = np.asarray(obj.velocity, dtype=float)
        world.append(np.asarray(obj.position, dtype=float) + v * t + off)
        vel.append(np.tile(v, (obj.n_points, 1)))
        rcs.append(np.full(obj.n_points, float(obj.rcs)))
        pid.append(next_id + np.arange(obj.n_points))
        src.append(np.full(obj.n_points, o_idx))
        next_id += obj.n_points
    world, vel, rcs = np.vstack(world), np.vstack(vel), np.concatenate(rcs)
    pid, src = np.concatenate(pid), np.concatenate(src)

    rho = (world - pos) @ rot        # R^T (p - pos), row-wise
    v_abs = vel @ rot
    r = np.linalg.norm(rho, axis=1)
    az = np.arctan2(rho[:, 1], rho[:, 0])
    el = np.arcsin(np.clip(rho[:, 2] / np.maximum(r, 1e-300), -1.0, 1.0))
    vis = ((r >= spec.min_range) & (r <= spec.max_range)
           & (np.abs(az) <= math.radians(spec.fov_azimuth_deg))
           & (np.abs(el) <= math.radians(spec.fov_elevation_deg)))

    rng = np.random.default_rng([spec.seed, k])
    order = rng.permutation(np.flatnonzero(vis))
    rho, v_abs, r, az, el = rho[order], v_abs[order], r[order], az[order], el[order]
    rcs_true = rcs[order]
    v_ego = np.array([speed, 0.0, 0.0])
    dop = expected_doppler(rho, v_ego, v_abs) if len(rho) else np.zeros(0)

    nz = spec.noise
    m = len(order)
    if nz.range_sigma or nz.angle_sigma:
        r = r + nz.range_sigma * rng.standard_normal(m)
        az = az + nz.angle_sigma * rng.standard_normal(m)
        el = el + nz.angle_sigma * rng.standard_normal(m)
        ce = np.cos(el)
        rho = np.column_stack([r * ce * np.cos(az), r * ce * np.sin(az), r * np.sin(el)])
    dop = dop + nz.doppler_sigma * rng.standard_normal(m)
    rcs_meas = rcs_true + nz.rcs_sigma * rng.standard_normal(m)

    if m == 0:
        log.warning("EmptyFrame: no point visible at frame %d (t=%.3f s)", k, t)
    frame = RadarFrame(t, rho, dop, rcs_meas)
    labels = PointLabels(pid[order], src[order], src[order] >= 0, v_abs, rcs_true)
    return frame, labels, RelativePose(rot, pos), v_ego


def generate_sequence(spec: SceneSpec):
    """All frames of a scene; returns ``(Sequence, GroundTruth)``."""
    n = int(math.floor(spec.duration * spec.frame_rate + 1e-9)) + 1
    offsets = _object_offsets(spec)
    frames, labels, poses, vels = [], [], [], []
    for k in range(n):
        f, lab, pose, v = generate_frame(spec, k, offsets)
        frames.append(f)
        labels.append(lab)
        poses.append(pose)
        vels.append(v)
    gt = GroundTruth(np.array([f.timestamp for f in frames]), poses, vels, labels)
    return Sequence(frames, labels=labels), gt


# -- presets -------------------------------------------------------------

MILD_NOISE = Noise(range_sigma=0.02, angle_sigma=math.radians(0.2),
                   doppler_sigma=0.02, rcs_sigma=0.5)
HEAVY_NOISE = Noise(range_sigma=0.1, angle_sigma=math.radians(1.0),
                    doppler_sigma=0.1, rcs_sigma=2.0)


def _landmark_field(rng, n, lo, hi):
    pts = rng.uniform(lo, hi, (n, 3))
    return pts, rng.uniform(0.0, 20.0, n)


def _straight(seed=1, n=800, noise=MILD_NOISE):
    rng = np.random.default_rng(seed)
    lm, rcs = _landmark_field(rng, n, [-5.0, -25.0, -1.0], [110.0, 25.0, 4.0])
    return SceneSpec(lm, rcs, [MotionSegment(10.0, 5.0, 0.0)], noise=noise, seed=seed)


def _turn90(seed=2):
    rng = np.random.default_rng(seed)
    lm, rcs = _landmark_field(rng, 1200, [-10.0, -30.0, -1.0], [75.0, 80.0, 4.0])
    segs = [MotionSegment(3.0, 5.0, 0.0), MotionSegment(3.0, 5.0, math.pi / 6.0),
            MotionSegment(4.0, 5.0, 0.0)]
    return SceneSpec(lm, rcs, segs, noise=MILD_NOISE, seed=seed)


def _dynamic20(seed=3):
    rng = np.random.default_rng(seed)
    lm, rcs = _landmark_field(rng, 80, [-10.0, 3.0, -1.0], [60.0, 30.0, 4.0])
    lm[::2, 1] *= -1.0  # both sides of the road, never on the path
    objs = [DynamicObject([0.0, 8.0, 0.5], [5.0, 0.0, 0.0], 15.0, 5),
            DynamicObject([50.0, -8.0, 0.5], [-5.0, 0.0, 0.0], 15.0, 5),
            DynamicObject([10.0, 14.0, 0.5], [3.0, 4.0, 0.0], 12.0, 5),
            DynamicObject([30.0, -14.0, 0.5], [4.0, -3.0, 0.0], 12.0, 5)]
    return SceneSpec(lm, rcs, [MotionSegment(10.0, 5.0, 0.0)], objs,
                     fov_azimuth_deg=180.0, fov_elevation_deg=90.0, max_range=200.0,
                     noise=MILD_NOISE, seed=seed)


PRESETS = {
    "straight": _straight,
    "turn90": _turn90,
    "dynamic20": _dynamic20,
    "sparse_noisy": lambda: _straight(seed=4, n=300, noise=HEAVY_NOISE),
}


def preset_scenes() -> dict:
    """Catalog of named scenes, built fresh on each call."""
    return {name: make() for name, make in PRESETS.items()}


def get_preset(name: str, noiseless: bool = False) -> SceneSpec:
    try:
        spec = PRESETS[name]()
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    if noiseless:
        spec = dataclasses.replace(spec, noise=Noise())
    return spec


# -- small standalone frames --------------------------------------------

def synthetic_frame(seed, n_static: int = 100, n_dynamic: int = 0, v_ego=None,
                    dynamic_speed: float = 5.0, extent: float = 40.0):
    """One noiseless frame of random static and moving points.

    Returns ``(frame, v_ego, v_abs)`` with velocities in the sensor frame.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = n_static + n_dynamic
    if v_ego is None:
        v_ego = rng.normal(0.0, 3.0, 3)
    v_ego = np.asarray(v_ego, dtype=float)
    while True:
        pos = rng.uniform(-extent, extent, (n, 3))
        if (np.linalg.norm(pos, axis=1) > 1.0).all():
            break
    v_abs = np.zeros((n, 3))
    d = rng.standard_normal((n_dynamic, 3))
    v_abs[n_static:] = dynamic_speed * d / np.linalg.norm(d, axis=1, keepdims=True)
    dop = expected_doppler(pos, v_ego, v_abs)
    frame = RadarFrame(0.0, pos, dop, rng.uniform(0.0, 20.0, n))
    return frame, v_ego, v_abs


# -- label files ---------------------------------------------------------

LABEL_COLUMNS = ("point_id", "source_id", "dynamic", "vx", "vy", "vz", "rcs_true")


def write_labels_csv(labels: PointLabels, path) -> None:
    lines = [",".join(LABEL_COLUMNS)]
    for pid, sid, dyn, v, rc in zip(labels.point_id, labels.source_id, labels.dynamic,
                                    labels.v_abs, labels.rcs_true):
        lines.append(f"{pid},{sid},{int(dyn)},{fmt(v[0])},{fmt(v[1])},{fmt(v[2])},{fmt(rc)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_labels_csv(path) -> PointLabels:
    try:
        a = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read labels {path}: {exc}") from exc
    a = a.reshape(-1, len(LABEL_COLUMNS))
    return PointLabels(a[:, 0].astype(np.int64), a[:, 1].astype(np.int64), a[:, 2] > 0,
                       a[:, 3:6].copy(), a[:, 6].copy())
