"""Budget-augmented dynamic programming over quantized secondary costs.

Budgets are integer level indices; level ``b`` stands for the budget ``b * delta``.
Tables are stored level-major (``values[b, j]``) because the sweep fills one
level at a time; ``BudgetTable.W`` exposes the node-major view.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .costs import WeightedGraph
from .scalar_sp import NO_EDGE, ScalarLabels, scalar_labels

log = logging.getLogger(__name__)

QUANT_GUARD = 1e-9
MAX_LEVEL_INDEX = 2 ** 40
MAX_TABLE_ENTRIES = 60_000_000
BLOCK = 32  # levels per active-edge refresh in shortcut mode


class BudgetError(ValueError):
    pass


class UnreachableError(BudgetError):
    pass


class PlanTimeout(RuntimeError):
    pass


@dataclass(frozen=True)
class BudgetGrid:
    delta: float
    m: int

    def __post_init__(self):
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise BudgetError(f"delta must be positive and finite, got {self.delta}")
        if self.m < 1:
            raise BudgetError(f"m must be >= 1, got {self.m}")

    @property
    def B(self) -> float:
        return self.m * self.delta

    def budget(self, level) -> float:
        return level * self.delta


def choose_delta(v_tilde_target: float, m: int) -> float:
    if m < 1:
        raise BudgetError(f"m must be >= 1, got {m}")
    if not math.isfinite(v_tilde_target):
        raise UnreachableError("target is unreachable (Ṽ = inf)")
    if not v_tilde_target > 0:
        raise BudgetError(f"Ṽ target must be positive, got {v_tilde_target}")
    return v_tilde_target / m


@dataclass(frozen=True)
class QuantizedGraph:
    graph: WeightedGraph
    delta: float
    q: np.ndarray  # integer level cost per edge, >= 1

    @property
    def c_hat(self) -> np.ndarray:
        return self.q * self.delta

    @property
    def overshoot(self) -> np.ndarray:
        """ĉ - c per edge (the per-transition slackness increment)."""
        return self.q * self.delta - self.graph.secondary


def quantize(g: WeightedGraph, delta: float) -> QuantizedGraph:
    """Round secondary costs up to multiples of ``delta``.

    A relative guard keeps exact multiples exact despite representation error
    (1.4 / 0.7 must give 2, not 3).
    """
    if not (delta > 0 and math.isfinite(delta)):
        raise BudgetError(f"delta must be positive and finite, got {delta}")
    ratio = g.secondary / delta
    if len(ratio) and ratio.max() > MAX_LEVEL_INDEX:
        raise BudgetError(f"secondary cost / delta = {ratio.max():.3g} overflows the level index")
    q = np.ceil(ratio - QUANT_GUARD * ratio).astype(np.int64)
    q = np.maximum(q, 1)
    q.setflags(write=False)
    return QuantizedGraph(g, float(delta), q)


def quantized_labels(qg: QuantizedGraph, tie_tol: float = 1e-9) -> ScalarLabels:
    """Scalar labels on (C, q); secondary values (V, Ṽ) come out in levels."""
    return scalar_labels(qg.graph, secondary=qg.q.astype(float), tie_tol=tie_tol)


@dataclass
class BudgetTable:
    qgraph: QuantizedGraph
    labels: ScalarLabels  # quantized labels used by the shortcuts
    values: np.ndarray  # (L+1, n) primary values W
    slack: np.ndarray  # (L+1, n) slackness S, nan where W is infinite
    pred: np.ndarray  # (L+1, n) edge index of the minimiser, NO_EDGE if none
    shortcuts: bool = True
    timings: dict = field(default_factory=dict)

    @property
    def delta(self) -> float:
        return self.qgraph.delta

    @property
    def levels(self) -> int:
        return self.values.shape[0] - 1

    @property
    def source(self) -> int:
        return self.qgraph.graph.source

    @property
    def W(self) -> np.ndarray:
        return self.values.T

    @property
    def S(self) -> np.ndarray:
        return self.slack.T

    def budget(self, level) -> float:
        return level * self.delta


def _level_index(vals: np.ndarray) -> np.ndarray:
    big = np.iinfo(np.int64).max // 4
    out = np.full(len(vals), big, dtype=np.int64)
    fin = np.isfinite(vals)
    out[fin] = np.rint(vals[fin]).astype(np.int64)
    return out


class _EdgeSet:
    """Edges (sorted by dst) prepared for one vectorised Bellman update per level."""

    def __init__(self, idx, src, dst, q, C, n):
        self.idx = idx
        self.src = src[idx]
        self.C = C[idx]
        d = dst[idx]
        self.base = self.src - q[idx] * n  # offset by the row of the target level
        if len(idx):
            head = np.concatenate(([True], d[1:] != d[:-1]))
            self.starts = np.flatnonzero(head)
            self.tgt = d[head]
            self.seg_of = np.cumsum(head) - 1
        else:
            self.starts = self.tgt = self.seg_of = np.empty(0, dtype=np.int64)
        self.flat = np.empty(len(idx), dtype=np.int64)
        self.vals = np.empty(len(idx))

    def relax(self, Wflat, row_offset):
        """(targets, minimum values, edge index of first minimiser)."""
        if not len(self.idx):
            return self.tgt, np.empty(0), np.empty(0, dtype=np.int64)
        np.add(self.base, row_offset, out=self.flat)
        np.take(Wflat, self.flat, out=self.vals)
        self.vals += self.C
        best = np.minimum.reduceat(self.vals, self.starts)
        hits = np.flatnonzero(self.vals == best[self.seg_of])
        first = hits[np.searchsorted(hits, self.starts)]
        return self.tgt, best, self.idx[first]


def sweep(qg: QuantizedGraph, labels: ScalarLabels, levels: int, shortcuts: bool = True,
          max_entries: int = MAX_TABLE_ENTRIES, deadline: Optional[float] = None,
          progress: Optional[Callable[[float], None]] = None) -> BudgetTable:
    """Fill W, S and predecessors for budget levels 0..levels in one ascending pass.

    ``labels`` must be computed on the quantized instance (``quantized_labels``).
    With ``shortcuts`` the closed-form entries (below V̂, at V̂, from Ṽ̂ upward)
    are assigned directly and the Bellman update only runs for nodes that are
    still constrained; without, every entry comes from the Bellman update.
    """
    g = qg.graph
    n = g.n
    L = int(levels)
    if L < 1:
        raise BudgetError("need at least one budget level")
    if (L + 1) * n > max_entries:
        raise BudgetError(f"table of {(L + 1)} x {n} entries exceeds the cap of {max_entries}")
    t0 = time.perf_counter()

    q = qg.q
    usable = np.flatnonzero(q <= L)
    pad = int(q[usable].max()) if len(usable) else 1
    # rows [0, pad) are the b < 0 region (always infinite); level b lives in row pad + b
    Wpad = np.full((pad + L + 1, n), np.inf)
    Spad = np.full((pad + L + 1, n), np.nan)
    pred = np.full((L + 1, n), NO_EDGE, dtype=np.int64)
    s = g.source
    Wpad[pad:, s] = 0.0
    Spad[pad:, s] = 0.0
    Wflat = Wpad.ravel()
    Sflat = Spad.ravel()
    over = qg.overshoot
    src = g.src

    U = labels.U
    v_lvl = _level_index(labels.V)
    vt_lvl = _level_index(labels.V_tilde)
    reach = np.isfinite(U)
    reach[s] = False
    if shortcuts:
        rv = np.flatnonzero(reach & (v_lvl <= L))
        order = np.argsort(v_lvl[rv], kind="stable")
        rv = rv[order]
        bounds = np.searchsorted(v_lvl[rv], np.arange(L + 2))
        at_v_nodes = [rv[bounds[b]:bounds[b + 1]] for b in range(L + 1)]
        sat = np.flatnonzero(reach & (vt_lvl <= L))
        sat = sat[np.argsort(vt_lvl[sat], kind="stable")]
        sat_start = np.searchsorted(vt_lvl[sat], np.arange(L + 2), side="right")
        pu = labels.pred_u
        pv = labels.pred_v
    else:
        edges = _EdgeSet(usable, src, g.dst, q, g.primary, n)

    for b in range(1, L + 1):
        if shortcuts and (b - 1) % BLOCK == 0:
            hi = min(b + BLOCK - 1, L)
            dst_v, dst_vt = v_lvl[g.dst[usable]], vt_lvl[g.dst[usable]]
            active = usable[(dst_v < hi) & (dst_vt > b) & reach[g.dst[usable]]]
            edges = _EdgeSet(active, src, g.dst, q, g.primary, n)
        row = pad + b
        tgt, best, arg = edges.relax(Wflat, row * n)
        Wrow = Wpad[row]
        prow = pred[b]
        if shortcuts:
            keep = (v_lvl[tgt] < b) & (vt_lvl[tgt] > b)
            tgt, best, arg = tgt[keep], best[keep], arg[keep]
        fin = np.isfinite(best)
        Wrow[tgt] = best
        prow[tgt[fin]] = arg[fin]
        if shortcuts:
            nv = at_v_nodes[b]
            Wrow[nv] = labels.U_tilde[nv]
            prow[nv] = pv[nv]
            ns = sat[:sat_start[b]]
            Wrow[ns] = U[ns]
            prow[ns] = pu[ns]
        Wrow[s] = 0.0
        prow[s] = NO_EDGE

        has = np.flatnonzero(prow >= 0)
        e = prow[has]
        Spad[row, has] = over[e] + Sflat[(row - q[e]) * n + src[e]]

        if progress is not None and b % BLOCK == 0:
            progress(b / L)
        if deadline is not None and time.perf_counter() > deadline:
            raise PlanTimeout(f"sweep exceeded its time budget at level {b}/{L}")

    table = BudgetTable(qg, labels, Wpad[pad:], Spad[pad:], pred, shortcuts)
    table.timings["sweep"] = time.perf_counter() - t0
    return table


@dataclass(frozen=True)
class Breakpoint:
    level: int
    budget: float
    primary: float
    slackness: float


@dataclass(frozen=True)
class ParetoFront:
    node: int
    breakpoints: List[Breakpoint]

    def __len__(self):
        return len(self.breakpoints)

    def __iter__(self):
        return iter(self.breakpoints)

    @property
    def budgets(self) -> np.ndarray:
        return np.array([bp.budget for bp in self.breakpoints])

    @property
    def primaries(self) -> np.ndarray:
        return np.array([bp.primary for bp in self.breakpoints])

    @property
    def levels(self) -> np.ndarray:
        return np.array([bp.level for bp in self.breakpoints], dtype=np.int64)


def pareto_levels(row: np.ndarray) -> np.ndarray:
    """Indices where a row of W strictly drops below every earlier value."""
    prev = np.concatenate(([np.inf], np.minimum.accumulate(row)[:-1]))
    return np.flatnonzero(row < prev)


def extract_pareto(table: BudgetTable, j: int) -> ParetoFront:
    if not math.isfinite(table.labels.U[j]):
        raise UnreachableError(f"node {j} is unreachable")
    row = table.values[:, j]
    lv = pareto_levels(row)
    return ParetoFront(j, [Breakpoint(int(b), table.budget(int(b)), float(row[b]),
                                      float(table.slack[b, j])) for b in lv])


@dataclass(frozen=True)
class ExtractedPath:
    nodes: List[int]
    edges: List[int]
    level: int
    primary: float  # Φ
    secondary: float  # φ (true costs)
    quantized_secondary: float  # φ̂
    slackness: float  # φ̂ - φ

    def to_json(self, g: WeightedGraph) -> dict:
        return {
            "level_index": self.level,
            "nodes": self.nodes,
            "polyline": g.polyline(self.nodes),
            "primary_cost": self.primary,
            "true_secondary_cost": self.secondary,
            "quantized_secondary_cost": self.quantized_secondary,
            "slackness": self.slackness,
        }


def extract_path(table: BudgetTable, j: int, level: int) -> ExtractedPath:
    """Walk predecessors from (j, level) to the source and replay the true costs."""
    g = table.qgraph.graph
    q = table.qgraph.q
    if not 0 <= level <= table.levels:
        raise BudgetError(f"level {level} outside 0..{table.levels}")
    if not math.isfinite(table.values[level, j]):
        raise BudgetError(f"W[{j}, {level}] is infinite: no path within that budget")
    nodes = [j]
    edges = []
    b = level
    while j != g.source:
        e = int(table.pred[b, j])
        if e == NO_EDGE:
            raise BudgetError(f"broken predecessor chain at node {j}, level {b}")
        edges.append(e)
        b -= int(q[e])
        j = int(g.src[e])
        nodes.append(j)
    edges.reverse()
    nodes.reverse()
    phi_big = 0.0
    phi = 0.0
    levels_used = 0
    for e in edges:
        phi_big += g.primary[e]
        phi += g.secondary[e]
        levels_used += int(q[e])
    phi_hat = levels_used * table.delta
    return ExtractedPath(nodes, edges, int(level), float(phi_big), float(phi), float(phi_hat),
                         float(phi_hat - phi))


def transition_bound(labels: ScalarLabels, j: int, c_min: float, C_min: float,
                     secondary_scale: float = 1.0) -> float:
    """K = min(Ṽ_j / c_min, Ũ_j / C_min): a bound on the edge count of Pareto-optimal paths.

    ``secondary_scale`` converts label secondary values to cost units (delta for
    labels computed in levels).
    """
    if not (c_min > 0 and C_min > 0):
        raise BudgetError("minimum edge costs must be positive")
    vt = labels.V_tilde[j] * secondary_scale
    ut = labels.U_tilde[j]
    if not (math.isfinite(vt) and math.isfinite(ut)):
        raise UnreachableError(f"node {j} is unreachable")
    return min(vt / c_min, ut / C_min)


def slack_guarantee(phi_hat: float, K: float, delta: float) -> float:
    """Lower bound φ(P) >= φ̂(P) - K δ on the true secondary cost."""
    return phi_hat - K * delta


@dataclass
class RefinementRound:
    m: int
    delta: float
    table: BudgetTable
    front: ParetoFront
    K: float
    dp_seconds: float


def levels_for(labels_q: ScalarLabels, j: int, m: int) -> int:
    """Sweep depth: m levels, stretched to reach Ṽ̂_j so the whole front is covered."""
    vt = labels_q.V_tilde[j]
    return max(int(m), int(vt) if math.isfinite(vt) else 0, 1)


def refine_doubling(g: WeightedGraph, m_start: int, rounds: int, target: Optional[int] = None,
                    true_labels: Optional[ScalarLabels] = None, shortcuts: bool = True):
    """Solve for m, 2m, 4m, ... levels with delta = Ṽ_target / m.

    Returns ``(rounds, diagnostics)``; the diagnostics check that the best
    value reachable within any fixed budget never gets worse as m doubles.
    """
    if rounds < 1:
        raise BudgetError("rounds must be >= 1")
    j = g.goal if target is None else int(target)
    labels = true_labels if true_labels is not None else scalar_labels(g)
    out: List[RefinementRound] = []
    for k in range(rounds):
        m = m_start * 2 ** k
        delta = choose_delta(labels.V_tilde[j], m)
        t0 = time.perf_counter()
        qg = quantize(g, delta)
        ql = quantized_labels(qg)
        table = sweep(qg, ql, levels_for(ql, j, m), shortcuts=shortcuts)
        front = extract_pareto(table, j)
        dp = time.perf_counter() - t0
        K = transition_bound(ql, j, g.secondary.min(), g.primary.min(), secondary_scale=delta)
        out.append(RefinementRound(m, delta, table, front, K, dp))
    return out, refinement_diagnostics(out, j)


def refinement_diagnostics(rounds: List[RefinementRound], j: int) -> dict:
    checks = []
    for coarse, fine in zip(rounds, rounds[1:]):
        ratio = coarse.delta / fine.delta
        Wc = np.minimum.accumulate(coarse.table.values[:, j])
        Wf = np.minimum.accumulate(fine.table.values[:, j])
        lv = np.arange(len(Wc))
        fine_lv = np.rint(lv * ratio).astype(np.int64)
        ok = fine_lv < len(Wf)
        worse = np.flatnonzero(Wf[fine_lv[ok]] > Wc[lv[ok]])
        checks.append({
            "m_coarse": coarse.m,
            "m_fine": fine.m,
            "monotone": not len(worse),
            "violations": [int(b) for b in worse[:10]],
        })
    return {
        "node": j,
        "monotone_refinement": all(c["monotone"] for c in checks),
        "pairs": checks,
        "front_sizes": [len(r.front) for r in rounds],
        "dp_seconds": [r.dp_seconds for r in rounds],
    }
