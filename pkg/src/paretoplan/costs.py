"""Edge weights: Euclidean distance and integrated threat exposure."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .geometry import OccupancyGrid, Point2, as_point, lines_of_sight
from .roadmap import Roadmap


class CostError(ValueError):
    pass


@dataclass(frozen=True)
class Threat:
    p: Point2
    s: float
    r: float = 0.0
    R: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "p", as_point(self.p))
        if not self.s > 0:
            raise CostError(f"threat severity must be positive, got {self.s}")
        if not self.r >= 0:
            raise CostError(f"threat minimum radius must be >= 0, got {self.r}")
        if not self.R > self.r:
            raise CostError(f"visibility radius R={self.R} must exceed r={self.r}")

    @classmethod
    def from_dict(cls, d: dict) -> "Threat":
        R = d.get("R")
        return cls(p=tuple(d["p"]), s=float(d["s"]), r=float(d.get("r", 0.0)),
                   R=math.inf if R is None else float(R))

    def to_dict(self) -> dict:
        d = {"p": list(self.p), "s": self.s, "r": self.r}
        if math.isfinite(self.R):
            d["R"] = self.R
        return d


@dataclass(frozen=True)
class CostModel:
    threats: Sequence[Threat] = ()
    quadrature_samples: int = 32
    visibility: bool = False
    epsilon: Optional[float] = None  # None -> 1 / map area
    swap: bool = False

    def __post_init__(self):
        object.__setattr__(self, "threats", tuple(self.threats))
        if self.quadrature_samples < 2:
            raise CostError("quadrature_samples must be >= 2")
        if self.epsilon is not None and not self.epsilon > 0:
            raise CostError("epsilon must be positive")

    def resolved_epsilon(self, grid: Optional[OccupancyGrid]) -> float:
        if self.epsilon is not None:
            return float(self.epsilon)
        if grid is None:
            raise CostError("epsilon defaults to 1/area and needs a grid")
        return 1.0 / grid.area


@dataclass(frozen=True)
class WeightedGraph:
    """Directed graph with strictly positive primary and secondary edge costs.

    Edges are sorted by (dst, src); ``indptr`` indexes the in-edges of each node.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    primary: np.ndarray
    secondary: np.ndarray
    source: int
    goal: int
    positions: Optional[np.ndarray] = None
    indptr: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.indptr is None:
            indptr = np.zeros(self.n + 1, dtype=np.int64)
            np.cumsum(np.bincount(self.dst, minlength=self.n), out=indptr[1:])
            object.__setattr__(self, "indptr", indptr)
        for name in ("primary", "secondary"):
            w = getattr(self, name)
            if len(w) != len(self.src):
                raise CostError(f"{name} cost array has wrong length")
            if len(w) and not (np.all(np.isfinite(w)) and w.min() > 0):
                raise CostError(f"{name} costs must be finite and strictly positive")

    @classmethod
    def from_edges(cls, n: int, edges, source: int, goal: int, positions=None) -> "WeightedGraph":
        """Build from rows ``(i, j, C_ij, c_ij)``; parallel edges keep input order."""
        arr = np.asarray(edges, dtype=float).reshape(-1, 4)
        src = arr[:, 0].astype(np.int64)
        dst = arr[:, 1].astype(np.int64)
        if len(src) and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n):
            raise CostError("edge endpoint out of range")
        if np.any(src == dst):
            raise CostError("self-transitions are not allowed")
        if not (0 <= source < n and 0 <= goal < n):
            raise CostError("source/goal out of range")
        order = np.lexsort((src, dst))
        pos = None if positions is None else np.asarray(positions, dtype=float).reshape(n, 2)
        return cls(n, src[order], dst[order], arr[order, 2].copy(), arr[order, 3].copy(),
                   int(source), int(goal), pos)

    @classmethod
    def from_json(cls, doc: dict) -> "WeightedGraph":
        positions = doc.get("nodes")
        n = int(doc["n"]) if "n" in doc else len(positions)
        return cls.from_edges(n, doc["edges"], int(doc["source"]), int(doc["goal"]), positions)

    def to_json(self) -> dict:
        doc = {
            "n": self.n,
            "edges": [[int(i), int(j), float(C), float(c)] for i, j, C, c
                      in zip(self.src, self.dst, self.primary, self.secondary)],
            "source": self.source,
            "goal": self.goal,
        }
        if self.positions is not None:
            doc["nodes"] = self.positions.tolist()
        return doc

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def digest(self) -> str:
        """Content hash of the topology and node positions (costs excluded)."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(np.column_stack([self.src, self.dst]), dtype="<i8").tobytes())
        if self.positions is not None:
            h.update(np.ascontiguousarray(self.positions, dtype="<f8").tobytes())
        h.update(json.dumps([self.n, self.source, self.goal]).encode())
        return h.hexdigest()

    def swapped(self) -> "WeightedGraph":
        return replace(self, primary=self.secondary, secondary=self.primary)

    def with_goal(self, goal: int) -> "WeightedGraph":
        if not 0 <= goal < self.n:
            raise CostError(f"goal {goal} out of range")
        return replace(self, goal=int(goal))

    def with_secondary(self, secondary: np.ndarray) -> "WeightedGraph":
        return replace(self, secondary=np.asarray(secondary, dtype=float))

    def polyline(self, nodes: Sequence[int]) -> List[List[float]]:
        if self.positions is None:
            return [[float(j), 0.0] for j in nodes]
        return self.positions[list(nodes)].tolist()


def distance_cost(a: Point2, b: Point2) -> float:
    d = math.hypot(b[0] - a[0], b[1] - a[1])
    if d == 0:
        raise CostError("zero-length edge")
    return d


def threat_level(threats: Sequence[Threat], x) -> np.ndarray:
    """Instantaneous exposure sum_k s_k / clip(|x - p_k|^2, r_k^2, R_k^2)."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    total = np.zeros(len(pts))
    for t in threats:
        total += _tau(t, pts)
    return total if np.ndim(x) > 1 else total[0]


def _tau(t: Threat, pts: np.ndarray) -> np.ndarray:
    d2 = (pts[:, 0] - t.p[0]) ** 2 + (pts[:, 1] - t.p[1]) ** 2
    d2 = np.clip(d2, t.r * t.r, t.R * t.R)
    if np.any(d2 == 0):
        raise CostError(f"evaluation point coincides with threat at {t.p} and r = 0")
    return t.s / d2


def threat_level_vis(threats: Sequence[Threat], grid: OccupancyGrid, x, epsilon: float) -> np.ndarray:
    """Exposure where each threat contributes only if it has line of sight, else ``epsilon``."""
    if not epsilon > 0:
        raise CostError("epsilon must be positive")
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    total = np.zeros(len(pts))
    for t in threats:
        seen = lines_of_sight(grid, pts, np.broadcast_to(np.asarray(t.p), pts.shape))
        tau = np.full(len(pts), float(epsilon))
        if seen.any():
            tau[seen] = _tau(t, pts[seen])
        total += tau
    return total if np.ndim(x) > 1 else total[0]


def edge_threat_costs(a, b, model: CostModel, grid: Optional[OccupancyGrid] = None,
                      chunk: int = 1 << 18) -> np.ndarray:
    """Composite-midpoint quadrature of the exposure integral for each segment a[k]-b[k]."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    Q = model.quadrature_samples
    t = (np.arange(Q) + 0.5) / Q
    eps = model.resolved_epsilon(grid) if model.visibility else None
    if model.visibility and grid is None:
        raise CostError("visibility model needs an occupancy grid")
    out = np.empty(len(a))
    step = max(chunk // Q, 1)
    for s in range(0, len(a), step):
        aa, bb = a[s:s + step], b[s:s + step]
        pts = (aa[:, None, :] * (1 - t)[None, :, None] + bb[:, None, :] * t[None, :, None]).reshape(-1, 2)
        if model.visibility:
            tau = threat_level_vis(model.threats, grid, pts, eps)
        else:
            tau = threat_level(model.threats, pts)
        length = np.hypot(bb[:, 0] - aa[:, 0], bb[:, 1] - aa[:, 1])
        out[s:s + step] = length * tau.reshape(-1, Q).mean(axis=1)
    return out


def edge_threat_cost(a: Point2, b: Point2, model: CostModel, grid: Optional[OccupancyGrid] = None) -> float:
    return float(edge_threat_costs([a], [b], model, grid)[0])


def assign_costs(rm: Roadmap, model: CostModel, grid: Optional[OccupancyGrid] = None) -> WeightedGraph:
    """Distance as primary and threat exposure as secondary (or the reverse with ``swap``)."""
    dist = rm.lengths
    if len(dist) and dist.min() <= 0:
        raise CostError("roadmap contains a zero-length edge")
    # evaluate each undirected pair once in canonical orientation: reversal-invariant by construction
    lo = np.minimum(rm.src, rm.dst)
    hi = np.maximum(rm.src, rm.dst)
    pairs, inverse = np.unique(np.column_stack([lo, hi]), axis=0, return_inverse=True)
    threat = edge_threat_costs(rm.nodes[pairs[:, 0]], rm.nodes[pairs[:, 1]], model, grid)
    threat = threat[inverse.reshape(-1)]
    if len(threat) and not threat.min() > 0:
        raise CostError("non-positive threat exposure on some edge (no threats configured?)")
    primary, secondary = (threat, dist) if model.swap else (dist, threat)
    return WeightedGraph(rm.n_nodes, rm.src, rm.dst, primary, secondary, rm.source, rm.goal,
                         rm.nodes, rm.indptr)
