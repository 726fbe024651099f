"""Velocity-aware proximity graph and node/edge feature assembly."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .preprocess import CompensatedFrame, edge_velocities
from .radar_cloud import fmt


@dataclass
class GraphConfig:
    lam: float = 1.0          # s; weight on |v_i' - v_j'|
    f_threshold: float = 2.0  # m
    max_degree_cap: int = 32

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not self.f_threshold > 0:
            raise ValueError("f_threshold must be > 0")
        if self.max_degree_cap < 1:
            raise ValueError("max_degree_cap must be >= 1")


@dataclass(frozen=True, eq=False)
class RadarGraph:
    """Undirected graph; ``edges`` rows are (i, j) with i < j.

    X: (N, 3) coordinates. Y: (N, 3) ``[v', rcs, degree]``.
    Z: (E, 2) ``[v_ij, |rho_i - rho_j|]`` for the i -> j orientation; the
    j -> i edge velocity is ``-v_ij``.
    """

    edges: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.X)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def degree(self) -> np.ndarray:
        return np.bincount(self.edges.reshape(-1), minlength=self.node_count)

    def directed(self):
        """Both orientations: (senders, receivers, Z) with Z oriented receiver -> sender.

        Row k describes the message from ``senders[k]`` into ``receivers[k]``;
        its edge velocity is that of the (receiver, sender) ordered pair.
        """
        i, j = self.edges[:, 0], self.edges[:, 1]
        recv = np.concatenate([i, j])
        send = np.concatenate([j, i])
        z = np.concatenate([self.Z, self.Z * np.array([-1.0, 1.0])])
        return send, recv, z

    def edge_set(self) -> set:
        return {(int(a), int(b)) for a, b in self.edges}


def edge_costs(positions, velocity, lam: float):
    """Pairwise cost matrix ``|rho_i - rho_j| + lam * |v_i - v_j|``."""
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    return dist + lam * np.abs(velocity[:, None] - velocity[None, :]), dist


def select_edges(cost: np.ndarray, threshold: float, cap: int) -> np.ndarray:
    """Edges with cost strictly below ``threshold``, degree-capped.

    Candidates are visited in ascending (cost, i, j) order; an edge is kept
    only while both endpoints have fewer than ``cap`` edges.
    """
    n = len(cost)
    iu, ju = np.triu_indices(n, k=1)
    c = cost[iu, ju]
    keep = c < threshold
    iu, ju, c = iu[keep], ju[keep], c[keep]
    order = np.lexsort((ju, iu, c))
    deg = np.zeros(n, dtype=int)
    out = []
    for k in order:
        a, b = iu[k], ju[k]
        if deg[a] < cap and deg[b] < cap:
            deg[a] += 1
            deg[b] += 1
            out.append((a, b))
    if not out:
        return np.zeros((0, 2), dtype=int)
    e = np.array(out, dtype=int)
    return e[np.lexsort((e[:, 1], e[:, 0]))]


def build_graph(cf: CompensatedFrame, cfg: GraphConfig | None = None) -> RadarGraph:
    cfg = cfg or GraphConfig()
    pos = cf.frame.positions
    n = len(pos)
    cost, dist = edge_costs(pos, cf.node_velocity, cfg.lam)
    edges = select_edges(cost, cfg.f_threshold, cfg.max_degree_cap)
    deg = np.bincount(edges.reshape(-1), minlength=n).astype(float)
    vij = edge_velocities(cf, edges)
    z = np.column_stack([vij, dist[edges[:, 0], edges[:, 1]]]) if len(edges) else np.zeros((0, 2))
    y = np.column_stack([cf.node_velocity, cf.frame.rcs, deg]) if n else np.zeros((0, 3))
    return RadarGraph(edges=edges, X=pos.copy(), Y=y, Z=z)


@dataclass
class GraphStats:
    node_count: int
    edge_count: int
    degree_histogram: list   # degree_histogram[d] = number of nodes of degree d
    isolated: int

    def as_dict(self) -> dict:
        return {"nodes": self.node_count, "edges": self.edge_count,
                "degree_histogram": self.degree_histogram, "isolated": self.isolated}


def graph_stats(g: RadarGraph) -> GraphStats:
    if g.node_count == 0:
        return GraphStats(0, 0, [], 0)
    deg = g.degree
    return GraphStats(g.node_count, g.edge_count,
                      np.bincount(deg).tolist(), int(np.sum(deg == 0)))


def write_edge_csv(g: RadarGraph, path) -> None:
    lines = ["i,j,v_ij,dist"]
    for (a, b), (v, d) in zip(g.edges, g.Z):
        lines.append(f"{a},{b},{fmt(v)},{fmt(d)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
