"""Ground truth for small instances.

Nothing here is fast; these routines exist so the budget DP can be checked
against exact Pareto sets on graphs with a few dozen nodes.
"""
from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .costs import WeightedGraph

LABEL_CAP = 1_000_000
NEAR_TIE = 1e-12


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class ParetoPoint:
    primary: float
    secondary: float
    nodes: Tuple[int, ...]


def _strictly_less(a: float, b: float) -> bool:
    return a < b - NEAR_TIE * max(abs(a), abs(b), 1.0)


def dominates(a: Tuple[float, float], b: Tuple[float, float]) -> bool:
    """a dominates b: no worse in both criteria, strictly better (beyond a near-tie) in one."""
    return (a[0] <= b[0] and a[1] <= b[1]
            and (_strictly_less(a[0], b[0]) or _strictly_less(a[1], b[1])))


def _in_lists(g: WeightedGraph):
    out: Dict[int, List[Tuple[int, float, float]]] = {i: [] for i in range(g.n)}
    for i, j, C, c in zip(g.src.tolist(), g.dst.tolist(), g.primary.tolist(), g.secondary.tolist()):
        out[i].append((j, C, c))
    return out


def exact_pareto_all(g: WeightedGraph, budget_cap: Optional[float] = None,
                     label_cap: int = LABEL_CAP) -> List[List[ParetoPoint]]:
    """Non-dominated (Φ, φ) labels at every node, by label correcting with dominance pruning."""
    adj = _in_lists(g)
    # label: (Phi, phi, node, parent label id)
    labels: List[Tuple[float, float, int, int]] = [(0.0, 0.0, g.source, -1)]
    alive = [True]
    at_node: List[List[int]] = [[] for _ in range(g.n)]
    at_node[g.source].append(0)
    queue = deque([0])
    created = 1
    while queue:
        lid = queue.popleft()
        if not alive[lid]:
            continue
        Phi, phi, i, _ = labels[lid]
        for j, C, c in adj[i]:
            cand = (Phi + C, phi + c)
            if budget_cap is not None and cand[1] > budget_cap:
                continue
            bucket = at_node[j]
            if any(dominates((labels[k][0], labels[k][1]), cand) or
                   (labels[k][0] == cand[0] and labels[k][1] == cand[1]) for k in bucket):
                continue
            keep = []
            for k in bucket:
                if dominates(cand, (labels[k][0], labels[k][1])):
                    alive[k] = False
                else:
                    keep.append(k)
            labels.append((cand[0], cand[1], j, lid))
            alive.append(True)
            keep.append(len(labels) - 1)
            at_node[j] = keep
            queue.append(len(labels) - 1)
            created += 1
            if created > label_cap:
                raise OracleError(f"label cap {label_cap} exceeded")

    def trace(lid):
        nodes = []
        while lid >= 0:
            nodes.append(labels[lid][2])
            lid = labels[lid][3]
        return tuple(reversed(nodes))

    fronts = []
    for j in range(g.n):
        pts = [ParetoPoint(labels[k][0], labels[k][1], trace(k)) for k in at_node[j]]
        pts.sort(key=lambda p: (p.secondary, p.primary))
        fronts.append(pts)
    return fronts


def exact_pareto(g: WeightedGraph, s: Optional[int] = None, j: Optional[int] = None,
                 budget_cap: Optional[float] = None, label_cap: int = LABEL_CAP) -> List[ParetoPoint]:
    """Complete Pareto set of (Φ, φ) from ``s`` to ``j``, sorted by increasing φ."""
    if s is not None and s != g.source:
        g = _with_source(g, s)
    target = g.goal if j is None else j
    return exact_pareto_all(g, budget_cap, label_cap)[target]


def _with_source(g: WeightedGraph, s: int) -> WeightedGraph:
    from dataclasses import replace
    return replace(g, source=int(s))


def constrained_value(front: List[ParetoPoint], beta: float) -> float:
    """min Φ over front points with φ <= beta."""
    best = math.inf
    for p in front:
        if p.secondary <= beta and p.primary < best:
            best = p.primary
    return best


def exact_constrained(g: WeightedGraph, s: Optional[int], j: int, beta: float,
                      label_cap: int = LABEL_CAP) -> float:
    """W*(j, beta): least primary cost over paths whose secondary cost is at most beta."""
    if s is not None and s != g.source:
        g = _with_source(g, s)
    if j == g.source:
        return 0.0 if beta >= 0 else math.inf
    cap = None if math.isinf(beta) else beta
    return constrained_value(exact_pareto_all(g, cap, label_cap)[j], beta)


def enumerate_paths(g: WeightedGraph, j: int, max_paths: int = 200_000):
    """All simple paths source -> j with their (Φ, φ); brute-force DFS for tiny graphs."""
    adj = _in_lists(g)
    out = []
    stack = [(g.source, 0.0, 0.0, (g.source,))]
    while stack:
        i, Phi, phi, path = stack.pop()
        if i == j:
            out.append((Phi, phi, path))
            if len(out) > max_paths:
                raise OracleError("too many paths to enumerate")
            continue
        for k, C, c in adj[i]:
            if k not in path:
                stack.append((k, Phi + C, phi + c, path + (k,)))
    return out


def nondominated(points) -> List[Tuple[float, float]]:
    """Pareto filter of (Φ, φ) pairs; exact duplicates collapse to one."""
    pts = sorted(set((float(a), float(b)) for a, b in points), key=lambda p: (p[1], p[0]))
    out = []
    best = math.inf
    for Phi, phi in pts:
        if Phi < best:
            out.append((Phi, phi))
            best = Phi
    return out


def scalarize(g: WeightedGraph, w: float, s: Optional[int] = None, j: Optional[int] = None):
    """Label-setting optimum of w*C + (1-w)*c; returns (nodes, Φ, φ).

    Ties in the weighted cost are broken lexicographically, by the primary cost
    for w = 1 and by the secondary cost otherwise, so the endpoints return
    Pareto-optimal (not merely weakly optimal) paths.
    """
    if not 0.0 <= w <= 1.0:
        raise ValueError("w must lie in [0, 1]")
    source = g.source if s is None else int(s)
    target = g.goal if j is None else int(j)
    adj = _in_lists(g)
    inf = (math.inf, math.inf)
    best = {source: (0.0, 0.0)}
    parent = {source: None}
    acc = {source: (0.0, 0.0)}
    heap = [(0.0, 0.0, source)]
    done = set()
    while heap:
        key, tie, i = heapq.heappop(heap)
        if i in done:
            continue
        done.add(i)
        if i == target:
            break
        for k, C, c in adj[i]:
            nk = key + w * C + (1.0 - w) * c
            nt = tie + (c if w == 1.0 else C)
            if (nk, nt) < best.get(k, inf):
                best[k] = (nk, nt)
                parent[k] = i
                acc[k] = (acc[i][0] + C, acc[i][1] + c)
                heapq.heappush(heap, (nk, nt, k))
    if target not in done:
        raise OracleError(f"node {target} unreachable")
    nodes = []
    k = target
    while k is not None:
        nodes.append(k)
        k = parent[k]
    nodes.reverse()
    Phi, phi = acc[target]
    return nodes, Phi, phi


def scalarization_front(g: WeightedGraph, n_weights: int = 101, j: Optional[int] = None):
    """Distinct (Φ, φ) pairs returned by a uniform sweep of scalarization weights."""
    seen = set()
    for w in np.linspace(0.0, 1.0, n_weights):
        _, Phi, phi = scalarize(g, float(w), j=j)
        seen.add((Phi, phi))
    return sorted(seen, key=lambda p: (p[1], p[0]))
