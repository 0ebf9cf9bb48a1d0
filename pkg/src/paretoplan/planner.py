"""End-to-end solve on a weighted graph: labels, quantization, sweep, front, paths."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .budget_dp import (MAX_TABLE_ENTRIES, BudgetError, BudgetTable, ExtractedPath, ParetoFront,
                        QuantizedGraph, UnreachableError, choose_delta, extract_path,
                        levels_for, pareto_levels, quantize, quantized_labels, sweep,
                        transition_bound)
from .budget_dp import Breakpoint
from .costs import WeightedGraph
from .scalar_sp import TIE_TOL, ScalarLabels, max_tilde_v, scalar_labels

LEVEL_GUARD = 1e-9


@dataclass
class PlanResult:
    graph: WeightedGraph
    goal: int
    labels: ScalarLabels  # true-cost labels
    qgraph: QuantizedGraph
    qlabels: ScalarLabels  # labels on (C, q), secondary in levels
    m: int
    table: BudgetTable
    front: ParetoFront
    paths: List[ExtractedPath]
    K: float
    budget_level: Optional[int] = None  # top level when an explicit budget was given
    timings: dict = field(default_factory=dict)

    @property
    def delta(self) -> float:
        return self.qgraph.delta

    @property
    def feasible(self) -> bool:
        return len(self.front) > 0

    def rows(self) -> List[dict]:
        """One row per breakpoint, in the column order of the CSV export."""
        return [{
            "level_index": bp.level,
            "budget": bp.budget,
            "primary_cost": bp.primary,
            "slackness": bp.slackness,
            "true_secondary_cost": p.secondary,
        } for bp, p in zip(self.front, self.paths)]

    def summary(self) -> dict:
        return {
            "goal": self.goal,
            "delta": self.delta,
            "m": self.m,
            "levels": self.table.levels,
            "budget_level": self.budget_level,
            "feasible": self.feasible,
            "K": self.K,
            "U": float(self.labels.U[self.goal]),
            "V": float(self.labels.V[self.goal]),
            "U_tilde": float(self.labels.U_tilde[self.goal]),
            "V_tilde": float(self.labels.V_tilde[self.goal]),
            "tie_changes": self.labels.tie_changes,
            "front": self.rows(),
        }


def default_delta(labels: ScalarLabels, goal: int, m: int) -> float:
    """Ṽ_goal / m; when Ṽ_goal is 0 (goal at the source) fall back to the largest Ṽ, then to 1/m."""
    vt = labels.V_tilde[goal]
    if not math.isfinite(vt):
        raise UnreachableError(f"goal {goal} is unreachable from the source")
    if vt > 0:
        return choose_delta(vt, m)
    try:
        top = max_tilde_v(labels)
    except ValueError:
        top = 0.0
    return choose_delta(top if top > 0 else 1.0, m)


def solve(g: WeightedGraph, goal: Optional[int] = None, m: int = 64, delta: Optional[float] = None,
          budget: Optional[float] = None, shortcuts: bool = True, tie_tol: float = TIE_TOL,
          max_entries: int = MAX_TABLE_ENTRIES, deadline: Optional[float] = None,
          progress: Optional[Callable[[float], None]] = None,
          labels: Optional[ScalarLabels] = None) -> PlanResult:
    """Pareto front of (secondary budget, primary cost) from the source to ``goal``.

    ``delta`` defaults to Ṽ_goal / m.  Without ``budget`` the sweep runs far
    enough to cover the whole front; with it, only levels up to floor(budget/δ).
    """
    t_start = time.perf_counter()
    goal = g.goal if goal is None else int(goal)
    if not 0 <= goal < g.n:
        raise BudgetError(f"goal {goal} out of range")
    if g.goal != goal:
        g = g.with_goal(goal)
    timings = {}

    t0 = time.perf_counter()
    if labels is None:
        labels = scalar_labels(g, tie_tol=tie_tol)
    timings["labels"] = time.perf_counter() - t0
    if not math.isfinite(labels.U[goal]):
        raise UnreachableError(f"goal {goal} is unreachable from the source")

    t0 = time.perf_counter()
    if delta is None:
        delta = default_delta(labels, goal, m)
    qg = quantize(g, delta)
    ql = quantized_labels(qg, tie_tol=tie_tol)
    timings["quantize"] = time.perf_counter() - t0

    budget_level = None
    if budget is not None:
        if not budget >= 0:
            raise BudgetError(f"budget must be non-negative, got {budget}")
        budget_level = int(math.floor(budget / delta + LEVEL_GUARD))
        levels = max(budget_level, 1)
    else:
        levels = levels_for(ql, goal, m)

    table = sweep(qg, ql, levels, shortcuts=shortcuts, max_entries=max_entries,
                  deadline=deadline, progress=progress)
    timings["sweep"] = table.timings["sweep"]

    t0 = time.perf_counter()
    row = table.values[:, goal]
    lv = pareto_levels(row)
    if budget_level is not None:
        lv = lv[lv <= budget_level]
    front = ParetoFront(goal, [Breakpoint(int(b), table.budget(int(b)), float(row[b]),
                                          float(table.slack[b, goal])) for b in lv])
    paths = [extract_path(table, goal, bp.level) for bp in front]
    if g.n_edges:
        K = transition_bound(ql, goal, float(g.secondary.min()), float(g.primary.min()),
                             secondary_scale=delta)
    else:
        K = 0.0
    timings["front"] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_start
    return PlanResult(g, goal, labels, qg, ql, int(m), table, front, paths, K, budget_level, timings)


def node_bounds(result: PlanResult) -> np.ndarray:
    """Per-node K_j = min(Ṽ̂_j δ / c_min, Ũ̂_j / C_min); inf for unreachable nodes."""
    g = result.graph
    if not g.n_edges:
        return np.zeros(g.n)
    ql = result.qlabels
    with np.errstate(invalid="ignore"):
        k = np.minimum(ql.V_tilde * result.delta / g.secondary.min(), ql.U_tilde / g.primary.min())
    return np.where(np.isfinite(ql.U), k, np.inf)
