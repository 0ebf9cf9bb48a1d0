"""Probabilistic roadmap construction over an occupancy grid."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.spatial import cKDTree

from .geometry import OccupancyGrid, Point2, as_point, points_free, segments_free

log = logging.getLogger(__name__)

MAX_ATTEMPTS_PER_NODE = 1000


class RoadmapError(ValueError):
    pass


@dataclass(frozen=True)
class Roadmap:
    """Directed geometric graph; edges are kept sorted by (dst, src).

    ``indptr`` is the CSR row pointer over that ordering, so the in-edges of
    node ``j`` are ``indptr[j]:indptr[j + 1]``.
    """

    nodes: np.ndarray  # (N, 2) float
    src: np.ndarray
    dst: np.ndarray
    source: int
    goal: int
    indptr: np.ndarray = field(repr=False)

    @classmethod
    def from_edges(cls, nodes, edges, source: int, goal: int) -> "Roadmap":
        nodes = np.asarray(nodes, dtype=float).reshape(-1, 2)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        n = len(nodes)
        if not (0 <= source < n and 0 <= goal < n):
            raise RoadmapError(f"source/goal index out of range for {n} nodes")
        if len(edges) and (edges.min() < 0 or edges.max() >= n):
            raise RoadmapError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise RoadmapError("self-transitions are not allowed")
        order = np.lexsort((edges[:, 0], edges[:, 1]))
        src = edges[order, 0].copy()
        dst = edges[order, 1].copy()
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(dst, minlength=n), out=indptr[1:])
        for arr in (nodes, src, dst, indptr):
            arr.setflags(write=False)
        return cls(nodes, src, dst, int(source), int(goal), indptr)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @property
    def lengths(self) -> np.ndarray:
        d = self.nodes[self.dst] - self.nodes[self.src]
        return np.hypot(d[:, 0], d[:, 1])

    def in_degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def stats(self) -> Dict[str, float]:
        deg = self.in_degree()
        return {
            "n_nodes": self.n_nodes,
            "n_edges": self.n_edges,
            "max_in_degree": int(deg.max(initial=0)),
            "mean_in_degree": float(deg.mean()) if len(deg) else 0.0,
        }

    def to_json(self) -> dict:
        return {
            "nodes": self.nodes.tolist(),
            "edges": np.column_stack([self.src, self.dst]).tolist(),
            "source": self.source,
            "goal": self.goal,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Roadmap":
        return cls.from_edges(doc["nodes"], doc.get("edges", []), doc["source"], doc["goal"])

    def digest(self) -> str:
        """Content hash of the geometry (node coordinates and edge list)."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.nodes, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(np.column_stack([self.src, self.dst]), dtype="<i8").tobytes())
        h.update(json.dumps([self.source, self.goal]).encode())
        return h.hexdigest()


def in_neighbors(rm: Roadmap, j: int) -> set:
    if not 0 <= j < rm.n_nodes:
        raise RoadmapError(f"unknown node id {j}")
    return set(rm.src[rm.indptr[j]:rm.indptr[j + 1]].tolist())


def sample_free(grid: OccupancyGrid, n: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform rejection sampling of ``n`` collision-free positions."""
    x0, y0, x1, y1 = grid.bounds()
    out = np.empty((0, 2))
    attempts = 0
    budget = MAX_ATTEMPTS_PER_NODE * n
    while len(out) < n:
        batch = min(max(2 * (n - len(out)), 64), budget - attempts)
        if batch <= 0:
            raise RoadmapError(
                f"placed only {len(out)} of {n} free samples within {budget} attempts"
            )
        pts = np.column_stack([rng.uniform(x0, x1, batch), rng.uniform(y0, y1, batch)])
        attempts += batch
        out = np.vstack([out, pts[points_free(grid, pts, radius)]])
    return out[:n]


def connect_radius(grid: OccupancyGrid, nodes: np.ndarray, radius: float, robot_radius: float,
                   spacing: Optional[float] = None) -> np.ndarray:
    """All directed pairs within ``radius`` whose straight segment is collision free."""
    if len(nodes) < 2:
        return np.empty((0, 2), dtype=np.int64)
    pairs = cKDTree(nodes).query_pairs(radius, output_type="ndarray").astype(np.int64)
    if not len(pairs):
        return np.empty((0, 2), dtype=np.int64)
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    d = nodes[pairs[:, 1]] - nodes[pairs[:, 0]]
    pairs = pairs[np.hypot(d[:, 0], d[:, 1]) > 0]
    kw = {} if spacing is None else {"spacing": spacing}
    ok = segments_free(grid, nodes[pairs[:, 0]], nodes[pairs[:, 1]], robot_radius, **kw)
    pairs = pairs[ok]
    return np.vstack([pairs, pairs[:, ::-1]])


def build_prm(grid: OccupancyGrid, n_nodes: int, connect_radius_m: float, robot_radius: float,
              seed: int, source: Point2, goal: Point2, spacing: Optional[float] = None) -> Roadmap:
    """Uniform PRM: ``n_nodes`` free samples plus goal and source, radius-connected.

    Node order is samples, then goal, then source (source last).  When goal
    and source coincide a single node serves as both.
    """
    if n_nodes < 0:
        raise RoadmapError("n_nodes must be non-negative")
    if connect_radius_m <= 0:
        raise RoadmapError("connect_radius must be positive")
    source = as_point(source)
    goal = as_point(goal)
    for name, p in (("source", source), ("goal", goal)):
        if not points_free(grid, [p], robot_radius)[0]:
            raise RoadmapError(f"{name} {p} is in collision at robot radius {robot_radius}")

    rng = np.random.default_rng(seed)
    samples = sample_free(grid, n_nodes, robot_radius, rng)
    if goal == source:
        nodes = np.vstack([samples, [source]])
        g_idx = s_idx = len(samples)
    else:
        nodes = np.vstack([samples, [goal], [source]])
        g_idx, s_idx = len(samples), len(samples) + 1
    edges = connect_radius(grid, nodes, connect_radius_m, robot_radius, spacing)
    rm = Roadmap.from_edges(nodes, edges, s_idx, g_idx)
    log.debug("built PRM: %s", rm.stats())
    return rm


def attach_node(rm: Roadmap, grid: OccupancyGrid, p: Point2, connect_radius_m: float,
                robot_radius: float, spacing: Optional[float] = None):
    """Roadmap with ``p`` added as the goal node, connected by the same radius rule.

    Returns ``(roadmap, index)``; an existing node at exactly ``p`` is reused.
    """
    p = as_point(p)
    hit = np.flatnonzero((rm.nodes[:, 0] == p[0]) & (rm.nodes[:, 1] == p[1]))
    if len(hit):
        j = int(hit[0])
        return Roadmap.from_edges(rm.nodes, np.column_stack([rm.src, rm.dst]), rm.source, j), j
    if not points_free(grid, [p], robot_radius)[0]:
        raise RoadmapError(f"goal {p} is in collision at robot radius {robot_radius}")
    j = rm.n_nodes
    nodes = np.vstack([rm.nodes, [p]])
    d = rm.nodes - np.asarray(p)
    near = np.flatnonzero((np.hypot(d[:, 0], d[:, 1]) <= connect_radius_m) & (np.hypot(d[:, 0], d[:, 1]) > 0))
    kw = {} if spacing is None else {"spacing": spacing}
    ok = segments_free(grid, rm.nodes[near], np.repeat([p], len(near), axis=0), robot_radius, **kw)
    near = near[ok]
    new = np.vstack([
        np.column_stack([near, np.full(len(near), j)]),
        np.column_stack([np.full(len(near), j), near]),
    ]).astype(np.int64)
    edges = np.vstack([np.column_stack([rm.src, rm.dst]), new])
    return Roadmap.from_edges(nodes, edges, rm.source, j), j
