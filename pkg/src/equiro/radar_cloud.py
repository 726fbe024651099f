"""Radar point-cloud data model and file I/O.

Doppler sign convention: positive for approaching targets, negative for
receding ones. For a point at ``rho`` (sensor frame) moving with absolute
velocity ``v_abs`` seen from a sensor moving with ``v_ego``::

    doppler = (rho / |rho|) . (v_ego - v_abs)

CSV schema (one file per frame)::

    x,y,z,doppler,rcs          # meters, m/s, dBsm

Sequence manifest (JSON)::

    {"frames": [{"path": "frame_0000.csv", "timestamp": 0.0,
                 "labels": "labels_0000.csv"}, ...],
     "ground_truth": "gt.tum"}

Paths are relative to the manifest's directory; ``labels`` and
``ground_truth`` are optional.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import EmptyFile, EmptyInput, MissingColumn, NonFiniteValue, ZeroRange, DataError

COLUMNS = ("x", "y", "z", "doppler", "rcs")


def fmt(x: float) -> str:
    """Serialize a float with 9 significant digits."""
    s = f"{float(x):.9g}"
    return "0" if s == "-0" else s


class RadarPoint(NamedTuple):
    position: np.ndarray
    doppler: float
    rcs: float


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _validate(positions, doppler, rcs, path=None):
    n = len(positions)
    if positions.shape != (n, 3) or doppler.shape != (n,) or rcs.shape != (n,):
        raise DataError(f"inconsistent frame array shapes {positions.shape}, "
                        f"{doppler.shape}, {rcs.shape}")
    finite = (np.isfinite(positions).all(axis=1) & np.isfinite(doppler) & np.isfinite(rcs))
    if not finite.all():
        raise NonFiniteValue(int(np.argmin(finite)) + 1, path=path)
    rng = np.linalg.norm(positions, axis=1)
    if n and not (rng > 0).all():
        raise ZeroRange(int(np.argmin(rng > 0)) + 1, path=path)


@dataclass(frozen=True, eq=False)
class RadarFrame:
    """One radar scan, treated as instantaneous."""

    timestamp: float
    positions: np.ndarray
    doppler: np.ndarray
    rcs: np.ndarray

    def __post_init__(self):
        pos = _frozen(self.positions).reshape(-1, 3)
        dop = _frozen(self.doppler).reshape(-1)
        rcs = _frozen(self.rcs).reshape(-1)
        _validate(pos, dop, rcs)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "doppler", dop)
        object.__setattr__(self, "rcs", rcs)
        object.__setattr__(self, "timestamp", float(self.timestamp))

    @classmethod
    def empty(cls, timestamp: float = 0.0) -> "RadarFrame":
        return cls(timestamp, np.zeros((0, 3)), np.zeros(0), np.zeros(0))

    def __len__(self) -> int:
        return len(self.positions)

    def __iter__(self) -> Iterator[RadarPoint]:
        for p, d, r in zip(self.positions, self.doppler, self.rcs):
            yield RadarPoint(p, float(d), float(r))

    @property
    def ranges(self) -> np.ndarray:
        return np.linalg.norm(self.positions, axis=1)

    @property
    def directions(self) -> np.ndarray:
        return self.positions / self.ranges[:, None]

    def with_positions(self, positions) -> "RadarFrame":
        return RadarFrame(self.timestamp, positions, self.doppler, self.rcs)

    def same_as(self, other: "RadarFrame") -> bool:
        return (self.timestamp == other.timestamp
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.doppler, other.doppler)
                and np.array_equal(self.rcs, other.rcs))


def read_frame_csv(path, timestamp: float = 0.0) -> RadarFrame:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise EmptyFile(f"{path}: empty file (no header)")
    reader = csv.reader(io.StringIO(text))
    header = [h.strip() for h in next(reader)]
    for col in COLUMNS:
        if col not in header:
            raise MissingColumn(col, path)
    idx = [header.index(c) for c in COLUMNS]
    rows = []
    for rowno, row in enumerate(reader, start=1):
        if not row:
            continue
        try:
            vals = [float(row[i]) for i in idx]
        except (ValueError, IndexError) as exc:
            raise NonFiniteValue(rowno, str(exc), path=path) from None
        if not all(math.isfinite(v) for v in vals):
            raise NonFiniteValue(rowno, path=path)
        if vals[0] == 0.0 and vals[1] == 0.0 and vals[2] == 0.0:
            raise ZeroRange(rowno, path=path)
        rows.append(vals)
    a = np.array(rows, dtype=float).reshape(-1, 5)
    return RadarFrame(timestamp, a[:, :3], a[:, 3], a[:, 4])


def write_frame_csv(frame: RadarFrame, path) -> None:
    path = Path(path)
    lines = [",".join(COLUMNS)]
    for p, d, r in zip(frame.positions, frame.doppler, frame.rcs):
        lines.append(",".join(fmt(v) for v in (*p, d, r)))
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write frame to {path}: {exc}") from exc


# -- sequences -----------------------------------------------------------

@dataclass
class Sequence:
    frames: list
    ground_truth_path: Path | None = None
    # per-frame simulator labels, when available (see synth.PointLabels)
    labels: list | None = None

    def __post_init__(self):
        ts = [f.timestamp for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise DataError("frame timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.frames])


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(data, dict) or "frames" not in data:
        raise DataError(f"{path}: manifest needs a 'frames' list")
    return data


def read_sequence(manifest_path) -> Sequence:
    from .synth import read_labels_csv

    manifest_path = Path(manifest_path)
    data = read_manifest(manifest_path)
    base = manifest_path.parent
    frames, labels = [], []
    for k, entry in enumerate(data["frames"]):
        try:
            fpath, ts = entry["path"], float(entry["timestamp"])
        except (KeyError, TypeError, ValueError):
            raise DataError(f"{manifest_path}: frame entry {k} needs 'path' and 'timestamp'") from None
        frames.append(read_frame_csv(base / fpath, ts))
        if "labels" in entry:
            labels.append(read_labels_csv(base / entry["labels"]))
    if not frames:
        raise EmptyInput(f"{manifest_path}: no frames")
    gt = data.get("ground_truth")
    return Sequence(frames,
                    ground_truth_path=(base / gt) if gt else None,
                    labels=labels if len(labels) == len(frames) else None)


def write_manifest(path, frame_entries: list, ground_truth: str | None = None) -> None:
    data = {"frames": frame_entries}
    if ground_truth:
        data["ground_truth"] = ground_truth
    Path(path).write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


# -- diagnostics ---------------------------------------------------------

@dataclass
class KnownGeometry:
    """Sensor-frame kinematics a frame was generated with."""

    v_ego: np.ndarray
    v_abs: np.ndarray | None = None  # (N, 3); None means a static world


@dataclass
class DopplerSignReport:
    expected: np.ndarray
    flagged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def ok(self) -> bool:
        return len(self.flagged) == 0


def expected_doppler(positions, v_ego, v_abs=None) -> np.ndarray:
    positions = np.asarray(positions, dtype=float)
    u = positions / np.linalg.norm(positions, axis=1, keepdims=True)
    rel = np.asarray(v_ego, dtype=float)[None, :]
    if v_abs is not None:
        rel = rel - np.asarray(v_abs, dtype=float)
    return np.einsum("ij,ij->i", u, np.broadcast_to(rel, positions.shape))


def doppler_sign_check(frame: RadarFrame, known: KnownGeometry, tol: float = 1e-9) -> DopplerSignReport:
    """Flag points whose measured Doppler sign contradicts the known kinematics.

    Points whose expected Doppler is within ``tol`` of zero carry no sign
    information and are never flagged.
    """
    exp = expected_doppler(frame.positions, known.v_ego, known.v_abs)
    meas = frame.doppler
    bad = ((exp > tol) & (meas < -tol)) | ((exp < -tol) & (meas > tol))
    return DopplerSignReport(expected=exp, flagged=np.flatnonzero(bad))
