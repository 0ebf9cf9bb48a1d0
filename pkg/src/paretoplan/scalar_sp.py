"""Single-criterion label setting: U, V and the tie-restricted Ṽ, Ũ."""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .costs import WeightedGraph

TIE_TOL = 1e-9
NO_EDGE = -1


@dataclass(frozen=True)
class HalfLabels:
    lead: np.ndarray
    follow: np.ndarray
    pred: np.ndarray  # edge index of the chosen restricted minimiser, NO_EDGE at source/unreachable
    tie_changes: int  # nodes whose argmin set grew because of the tolerance


@dataclass(frozen=True)
class ScalarLabels:
    """Per-node U, Ṽ (primary-led) and V, Ũ (secondary-led) values.

    ``pred_u`` walks the primary-optimal tree that realises Ṽ, ``pred_v`` the
    secondary-optimal tree that realises Ũ.
    """

    U: np.ndarray
    V_tilde: np.ndarray
    V: np.ndarray
    U_tilde: np.ndarray
    pred_u: np.ndarray
    pred_v: np.ndarray
    source: int
    tie_changes: int = 0


def _dijkstra(n: int, source: int, out_ptr, out_dst, out_w, out_eid=None, allowed=None):
    dist = [float("inf")] * n
    dist[source] = 0.0
    done = [False] * n
    heap = [(0.0, source)]
    ptr = out_ptr.tolist()
    tgt = out_dst.tolist()
    w = out_w.tolist()
    ok = None if allowed is None else allowed.tolist()
    while heap:
        d, i = heapq.heappop(heap)
        if done[i]:
            continue
        done[i] = True
        for k in range(ptr[i], ptr[i + 1]):
            if ok is not None and not ok[k]:
                continue
            j = tgt[k]
            nd = d + w[k]
            if nd < dist[j]:
                dist[j] = nd
                heapq.heappush(heap, (nd, j))
    return np.array(dist)


def _out_csr(g: WeightedGraph):
    order = np.lexsort((g.dst, g.src))
    ptr = np.zeros(g.n + 1, dtype=np.int64)
    np.cumsum(np.bincount(g.src, minlength=g.n), out=ptr[1:])
    return order, ptr


def _first_per_dst(g: WeightedGraph, mask: np.ndarray) -> np.ndarray:
    # lowest-position edge (edges sorted by dst, then src) satisfying mask, per dst
    pred = np.full(g.n, NO_EDGE, dtype=np.int64)
    hits = np.flatnonzero(mask)
    if len(hits):
        d = g.dst[hits]
        first = np.concatenate(([True], d[1:] != d[:-1]))
        pred[d[first]] = hits[first]
    return pred


def dijkstra_pair(g: WeightedGraph, lead: str = "primary", tie_tol: float = TIE_TOL,
                  secondary: Optional[np.ndarray] = None) -> HalfLabels:
    """Lead-criterion optimum plus the other criterion minimised over lead-optimal paths.

    ``lead="primary"`` returns (U, Ṽ); ``lead="secondary"`` returns (V, Ũ).
    ``secondary`` overrides the graph's secondary weights (e.g. quantized levels).
    The restricted set N'_j keeps in-edges with lead[i] + w_ij <= lead[j] * (1 + tie_tol).
    """
    sec = g.secondary if secondary is None else np.asarray(secondary, dtype=float)
    if lead == "primary":
        w_lead, w_follow = g.primary, sec
    elif lead == "secondary":
        w_lead, w_follow = sec, g.primary
    else:
        raise ValueError(f"lead must be 'primary' or 'secondary', got {lead!r}")

    order, ptr = _out_csr(g)
    lead_v = _dijkstra(g.n, g.source, ptr, g.dst[order], w_lead[order])

    cand = lead_v[g.src] + w_lead
    reach = np.isfinite(cand)
    tight = reach & (cand <= lead_v[g.dst] * (1.0 + tie_tol))
    exact = reach & (cand == lead_v[g.dst])
    tie_changes = int(np.count_nonzero(
        np.bincount(g.dst[tight], minlength=g.n) != np.bincount(g.dst[exact], minlength=g.n)))

    follow = _dijkstra(g.n, g.source, ptr, g.dst[order], w_follow[order], allowed=tight[order])
    realised = tight & (follow[g.src] + w_follow == follow[g.dst])
    pred = _first_per_dst(g, realised)
    pred[g.source] = NO_EDGE
    return HalfLabels(lead_v, follow, pred, tie_changes)


def scalar_labels(g: WeightedGraph, secondary: Optional[np.ndarray] = None,
                  tie_tol: float = TIE_TOL) -> ScalarLabels:
    prim = dijkstra_pair(g, "primary", tie_tol, secondary)
    sec = dijkstra_pair(g, "secondary", tie_tol, secondary)
    return ScalarLabels(prim.lead, prim.follow, sec.lead, sec.follow, prim.pred, sec.pred,
                        g.source, prim.tie_changes + sec.tie_changes)


def max_tilde_v(labels) -> float:
    """Largest finite Ṽ; accepts ScalarLabels or a plain array of Ṽ values."""
    vt = labels.V_tilde if isinstance(labels, ScalarLabels) else np.asarray(labels, dtype=float)
    finite = vt[np.isfinite(vt)]
    if not len(finite):
        raise ValueError("no reachable node: every Ṽ is infinite")
    return float(finite.max())


def label_path(g: WeightedGraph, pred: np.ndarray, j: int) -> Tuple[list, float, float]:
    """Follow a predecessor tree back to the source; returns (nodes, Φ, φ)."""
    nodes = [j]
    edges = []
    guard = g.n + 1
    while j != g.source:
        e = int(pred[j])
        if e == NO_EDGE or guard == 0:
            raise ValueError(f"node {nodes[0]} is not reachable through the tree")
        edges.append(e)
        j = int(g.src[e])
        nodes.append(j)
        guard -= 1
    edges.reverse()
    nodes.reverse()
    phi_big = 0.0
    phi = 0.0
    for e in edges:
        phi_big += g.primary[e]
        phi += g.secondary[e]
    return nodes, phi_big, phi
