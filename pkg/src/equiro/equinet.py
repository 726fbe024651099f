"""Forward equivariant feature network.

Stage 1 is a DGCNN built from vector-channel layers: features are
``(N, C, 3)`` stacks of 3-vectors, layers only ever mix channels, so every
layer commutes with rotations about the origin. Stage 2 is EGNN-style message
passing that fuses the vector features with the invariant node features Y and
edge features Z.

Checkpoint layout (all integers little-endian)::

    8 bytes   magic b"EQRONET\\0"
    u32       format version (1)
    u32       tensor count T
    T times:  u16 name length, utf-8 name, u8 ndim, ndim x u32 dims
    payload:  each tensor's data as float64 LE, in table order
"""

from __future__ import annotations

import logging
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, EmptyNeighborhood, ShapeMismatch, TooFewPoints
from .graph import RadarGraph

log = logging.getLogger(__name__)

DIRECTION_EPS = 1e-12
MAGIC = b"EQRONET\0"
VERSION = 1


@dataclass
class EquiNetConfig:
    dgcnn_iterations: int = 3
    egnn_iterations: int = 4
    knn_k: int = 8
    dgcnn_widths: tuple = (16, 16, 16)   # output channels per DGCNN iteration; last is C'
    egnn_hidden: int = 32
    message_dim: int = 16
    node_dim: int = 16
    gamma_init: float = -1.0
    egnn_c_mode: str = "inverse_degree"  # or "degree"
    init_seed: int | None = None         # None: use the pipeline seed

    def __post_init__(self):
        self.dgcnn_widths = tuple(int(w) for w in self.dgcnn_widths)
        if len(self.dgcnn_widths) != self.dgcnn_iterations:
            raise ValueError("dgcnn_widths needs one entry per DGCNN iteration")
        if self.egnn_c_mode not in ("inverse_degree", "degree"):
            raise ValueError(f"unknown egnn_c_mode {self.egnn_c_mode!r}")
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")

    @property
    def out_channels(self) -> int:
        return self.dgcnn_widths[-1]

    @property
    def feature_width(self) -> int:
        return 3 * self.out_channels + self.node_dim


# -- parameters ----------------------------------------------------------

def silu(x):
    return x / (1.0 + np.exp(-x))


@dataclass
class Mlp:
    """Two-layer perceptron: ``silu(x @ w1 + b1) @ w2 + b2``."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __call__(self, x):
        # einsum instead of BLAS matmul: each output row is then computed the
        # same way wherever it sits, which keeps node permutations bitwise exact
        h = silu(np.einsum("nk,kh->nh", x, self.w1) + self.b1)
        return np.einsum("nh,ho->no", h, self.w2) + self.b2

    @classmethod
    def init(cls, rng, n_in, n_hidden, n_out):
        def u(fan_in, shape):
            return rng.uniform(-1.0, 1.0, shape) / np.sqrt(fan_in)
        return cls(u(n_in, (n_in, n_hidden)), u(n_in, n_hidden),
                   u(n_hidden, (n_hidden, n_out)), u(n_hidden, n_out))


@dataclass
class DgcnnLayer:
    W: np.ndarray   # (C_out, 2*C_in) channel mix, no bias
    K: np.ndarray   # (C_out, C_out) mix producing the nonlinearity direction


@dataclass
class EgnnLayer:
    phi_i1: Mlp
    phi_i2: Mlp
    phi_e: Mlp


@dataclass
class EquiNetParams:
    dgcnn: list
    egnn: list
    gamma: float = -1.0

    @classmethod
    def init(cls, cfg: EquiNetConfig, seed: int = 0) -> "EquiNetParams":
        rng = np.random.default_rng(seed if cfg.init_seed is None else cfg.init_seed)
        dg = []
        c_in = 1
        for c_out in cfg.dgcnn_widths:
            w = rng.uniform(-1.0, 1.0, (c_out, 2 * c_in)) / np.sqrt(2 * c_in)
            k = rng.uniform(-1.0, 1.0, (c_out, c_out)) / np.sqrt(c_out)
            dg.append(DgcnnLayer(w, k))
            c_in = c_out
        eg = []
        y_dim = 3
        for _ in range(cfg.egnn_iterations):
            eg.append(EgnnLayer(
                phi_i1=Mlp.init(rng, 1 + 2 * y_dim + 2, cfg.egnn_hidden, cfg.message_dim),
                phi_i2=Mlp.init(rng, y_dim + cfg.message_dim, cfg.egnn_hidden, cfg.node_dim),
                phi_e=Mlp.init(rng, cfg.message_dim, cfg.egnn_hidden, 1),
            ))
            y_dim = cfg.node_dim
        return cls(dg, eg, float(cfg.gamma_init))

    def tensors(self) -> dict:
        out = {}
        for l, layer in enumerate(self.dgcnn):
            out[f"dgcnn.{l}.W"] = layer.W
            out[f"dgcnn.{l}.K"] = layer.K
        for l, layer in enumerate(self.egnn):
            for name in ("phi_i1", "phi_i2", "phi_e"):
                mlp = getattr(layer, name)
                for p in ("w1", "b1", "w2", "b2"):
                    out[f"egnn.{l}.{name}.{p}"] = getattr(mlp, p)
        out["gamma"] = np.array(self.gamma)
        return out

    @classmethod
    def from_tensors(cls, t: dict) -> "EquiNetParams":
        def count(prefix):
            idx = {int(m.group(1)) for k in t if (m := re.match(rf"{prefix}\.(\d+)\.", k))}
            return len(idx)
        dg = [DgcnnLayer(t[f"dgcnn.{l}.W"], t[f"dgcnn.{l}.K"]) for l in range(count("dgcnn"))]
        eg = []
        for l in range(count("egnn")):
            mlps = {n: Mlp(*(t[f"egnn.{l}.{n}.{p}"] for p in ("w1", "b1", "w2", "b2")))
                    for n in ("phi_i1", "phi_i2", "phi_e")}
            eg.append(EgnnLayer(**mlps))
        return cls(dg, eg, float(t["gamma"]))

    def with_gamma(self, gamma: float) -> "EquiNetParams":
        return EquiNetParams(self.dgcnn, self.egnn, float(gamma))


def save_params(params: EquiNetParams, path) -> None:
    tensors = params.tensors()
    head = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    body = []
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        head.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        head.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        body.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(head + body))


def load_params(path) -> EquiNetParams:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise DataError(f"{path}: not an equinet checkpoint (bad magic)")
    version, n = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    table = []
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + ln].decode("utf-8")
        off += ln
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        table.append((name, shape))
    tensors = {}
    for name, shape in table:
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape)
        tensors[name] = arr.astype(float)
        off += 8 * size
    if off != len(buf):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    return EquiNetParams.from_tensors(tensors)


# -- vector-channel layers ----------------------------------------------

def ln_linear(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Mix channels: ``out[n, c] = sum_c' w[c, c'] v[n, c']``. Vector components never mix."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if v.ndim != 3 or v.shape[-1] != 3:
        raise ShapeMismatch(f"vector feature must be (N, C, 3), got {v.shape}")
    if w.ndim != 2 or w.shape[1] != v.shape[1]:
        raise ShapeMismatch(f"mixing matrix {w.shape} does not match {v.shape[1]} input channels")
    return np.einsum("dc,nck->ndk", w, v)


def vn_relu(v: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Keep v where <v, k> >= 0, else drop its component along k."""
    dot = np.sum(v * k, axis=-1, keepdims=True)
    kk = np.sum(k * k, axis=-1, keepdims=True)
    degenerate = kk < DIRECTION_EPS ** 2
    if degenerate.any():
        log.debug("ln_nonlinearity: %d degenerate directions passed through", int(degenerate.sum()))
    safe = np.where(degenerate, 1.0, kk)
    proj = v - (dot / safe) * k
    return np.where((dot >= 0) | degenerate, v, proj)


def ln_nonlinearity(v: np.ndarray, k_weights: np.ndarray) -> np.ndarray:
    """Equivariant ReLU whose per-channel direction is a learned channel mix of ``v``."""
    return vn_relu(v, ln_linear(v, k_weights))


def ln_pool(v: np.ndarray, neighborhoods) -> np.ndarray:
    """Channel-wise mean of ``v`` over each node's neighborhood."""
    v = np.asarray(v, dtype=float)
    if isinstance(neighborhoods, np.ndarray) and neighborhoods.ndim == 2:
        if neighborhoods.shape[1] == 0:
            raise EmptyNeighborhood("neighborhoods must be non-empty")
        return v[neighborhoods].mean(axis=1)
    out = np.empty((len(neighborhoods),) + v.shape[1:])
    for i, nb in enumerate(neighborhoods):
        nb = np.asarray(nb, dtype=int)
        if nb.size == 0:
            raise EmptyNeighborhood(f"node {i} has an empty neighborhood")
        out[i] = v[nb].mean(axis=0)
    return out


def pairwise_feature_distance(v: np.ndarray) -> np.ndarray:
    """Frobenius distances between the (C, 3) features of every node pair."""
    d = v[:, None] - v[None, :]
    return np.sqrt(np.sum(d * d, axis=(-2, -1)))


def knn(v: np.ndarray, k: int) -> np.ndarray:
    dist = pairwise_feature_distance(v)
    np.fill_diagonal(dist, np.inf)
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


def dgcnn_forward(points: np.ndarray, params: EquiNetParams, cfg: EquiNetConfig) -> np.ndarray:
    """Rotation-equivariant features ``(N, C', 3)`` for an ``(N, 3)`` cloud."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    k = cfg.knn_k
    if n < k + 1:
        raise TooFewPoints(f"DGCNN with k={k} needs >= {k + 1} points, got {n}")
    v = points[:, None, :]
    pool_idx = np.arange(n * k).reshape(n, k)
    for layer in params.dgcnn[:cfg.dgcnn_iterations]:
        idx = knn(v, k)
        center = np.broadcast_to(v[:, None], (n, k) + v.shape[1:])
        edge = np.concatenate([v[idx] - center, center], axis=2)
        h = edge.reshape(n * k, -1, 3)
        h = ln_nonlinearity(ln_linear(h, layer.W), layer.K)
        v = ln_pool(h, pool_idx)
    return v


def _segment_sum(values: np.ndarray, receivers: np.ndarray, n: int) -> np.ndarray:
    """Per-receiver sums, independent of edge order.

    Values are padded into (n, max_degree, ...) and sorted along the neighbor
    axis before summing, so any permutation of the edge list gives bitwise
    identical sums.
    """
    tail = values.shape[1:]
    if len(values) == 0:
        return np.zeros((n,) + tail)
    order = np.argsort(receivers, kind="stable")
    r = receivers[order]
    counts = np.bincount(r, minlength=n)
    slot = np.arange(len(r)) - np.repeat(np.cumsum(counts) - counts, counts)
    padded = np.zeros((n, counts.max()) + tail)
    padded[r, slot] = values[order]
    return np.sort(padded, axis=1).sum(axis=1)


def egnn_forward(xp: np.ndarray, y: np.ndarray, z: np.ndarray, g: RadarGraph,
                 params: EquiNetParams, cfg: EquiNetConfig):
    """Message passing over ``g``; returns ``(X_F, Y_F)``.

    ``z`` is the (E, 2) edge feature in the graph's i < j orientation.
    """
    xp = np.asarray(xp, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float).reshape(-1, 2)
    n = g.node_count
    if xp.ndim != 3 or len(xp) != n or len(y) != n or len(z) != g.edge_count:
        raise ShapeMismatch(f"egnn inputs X'{xp.shape}, Y{y.shape}, Z{z.shape} "
                            f"do not match graph with N={n}, E={g.edge_count}")
    i, j = g.edges[:, 0], g.edges[:, 1]
    recv = np.concatenate([i, j])
    send = np.concatenate([j, i])
    zdir = np.concatenate([z, z * np.array([-1.0, 1.0])])
    deg = np.bincount(recv, minlength=n).astype(float)
    if cfg.egnn_c_mode == "inverse_degree":
        scale = np.divide(1.0, deg, out=np.zeros(n), where=deg > 0)
    else:
        scale = deg
    for layer in params.egnn[:cfg.egnn_iterations]:
        dx = xp[recv] - xp[send]
        dn = np.sqrt(np.sum(dx * dx, axis=(1, 2)))
        kern = np.exp(params.gamma * dn)
        m_in = np.column_stack([kern, y[recv], y[send], zdir]) if len(recv) else \
            np.zeros((0, 1 + 2 * y.shape[1] + 2))
        m = layer.phi_i1(m_in)
        agg = _segment_sum(m, recv, n)
        coef = layer.phi_e(m)
        shift = _segment_sum(dx * coef[:, :, None], recv, n)
        xp = xp + scale[:, None, None] * shift
        y = layer.phi_i2(np.column_stack([y, agg]))
    return xp, y


def final_features(xf: np.ndarray, yf: np.ndarray) -> np.ndarray:
    """Per node: X_F flattened channel-major (c0x, c0y, c0z, c1x, ...), then Y_F."""
    if len(xf) != len(yf):
        raise ShapeMismatch(f"X_F has {len(xf)} nodes, Y_F has {len(yf)}")
    return np.concatenate([xf.reshape(len(xf), -1), yf], axis=1)


def split_features(f: np.ndarray, channels: int):
    """Inverse of :func:`final_features`."""
    if f.shape[1] < 3 * channels:
        raise ShapeMismatch(f"feature width {f.shape[1]} < 3 * {channels}")
    return f[:, :3 * channels].reshape(len(f), channels, 3), f[:, 3 * channels:]


def equinet_forward(g: RadarGraph, params: EquiNetParams, cfg: EquiNetConfig) -> np.ndarray:
    """Final per-node features F for a graph whose X is already translation-aligned."""
    xp = dgcnn_forward(g.X, params, cfg)
    xf, yf = egnn_forward(xp, g.Y, g.Z, g, params, cfg)
    return final_features(xf, yf)
