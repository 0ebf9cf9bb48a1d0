"""Invariant checks over a finished plan, reported as pass/fail with counterexamples.

Checks read the table as given, so a hand-corrupted table is reported rather
than repaired.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .budget_dp import NO_EDGE, extract_path, sweep
from .oracle import OracleError, exact_pareto_all
from .planner import PlanResult, node_bounds

REL_TOL = 1e-9
ORACLE_MAX_NODES = 60
ORACLE_MAX_ENTRIES = 200_000


@dataclass
class CheckResult:
    name: str
    passed: Optional[bool]  # None: skipped
    detail: str = ""
    counterexample: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        status = "skip" if self.passed is None else ("pass" if self.passed else "fail")
        return {"name": self.name, "status": status, "detail": self.detail,
                "counterexample": self.counterexample}


def _close(a, b, tol=REL_TOL):
    return np.isclose(a, b, rtol=tol, atol=tol)


def check_monotone(res: PlanResult) -> CheckResult:
    W = res.table.values
    with np.errstate(invalid="ignore"):
        bad = np.argwhere(W[1:] > W[:-1])
    if len(bad):
        b, j = (int(x) for x in bad[0])
        return CheckResult("monotonicity", False, f"{len(bad)} increasing steps",
                           {"node": j, "level": b + 1, "W_prev": float(W[b, j]), "W": float(W[b + 1, j])})
    return CheckResult("monotonicity", True, "every row non-increasing in level")


def check_source(res: PlanResult) -> CheckResult:
    col = res.table.values[:, res.graph.source]
    bad = np.flatnonzero(col != 0)
    if len(bad):
        return CheckResult("source_row", False, "source entry not zero",
                           {"level": int(bad[0]), "W": float(col[bad[0]])})
    return CheckResult("source_row", True, "W = 0 at the source on every level")


def check_shortcut_values(res: PlanResult) -> CheckResult:
    """inf exactly below V̂, Ũ̂ at V̂, U from Ṽ̂ upward (quantized labels)."""
    W = res.table.values
    L = res.table.levels
    ql = res.qlabels
    for j in range(res.graph.n):
        if j == res.graph.source:
            continue
        row = W[:, j]
        if not math.isfinite(ql.U[j]):
            if np.isfinite(row).any():
                return CheckResult("shortcut_values", False, "finite value at unreachable node", {"node": j})
            continue
        v = int(round(ql.V[j]))
        vt = int(round(ql.V_tilde[j]))
        lv = np.arange(L + 1)
        wrong_inf = np.flatnonzero(np.isfinite(row) != (lv >= v))
        if len(wrong_inf):
            b = int(wrong_inf[0])
            return CheckResult("shortcut_values", False, "finiteness disagrees with b >= V̂",
                               {"node": j, "level": b, "V_hat": v, "W": float(row[b])})
        if v <= L and not _close(row[v], ql.U_tilde[j]):
            return CheckResult("shortcut_values", False, "first feasible value differs from Ũ̂",
                               {"node": j, "level": v, "W": float(row[v]), "U_tilde_hat": float(ql.U_tilde[j])})
        if vt <= L:
            off = np.flatnonzero(~_close(row[vt:], ql.U[j]))
            if len(off):
                b = vt + int(off[0])
                return CheckResult("shortcut_values", False, "value above Ṽ̂ differs from U",
                                   {"node": j, "level": b, "W": float(row[b]), "U": float(ql.U[j])})
    return CheckResult("shortcut_values", True, "inf below V̂, Ũ̂ at V̂, U from Ṽ̂")


def check_slack_bounds(res: PlanResult, tol: float = REL_TOL) -> CheckResult:
    W, S = res.table.values, res.table.slack
    K = node_bounds(res)
    fin = np.isfinite(W)
    limit = (K * res.delta)[None, :]
    scale = tol * np.maximum(1.0, limit)
    with np.errstate(invalid="ignore"):
        bad = fin & ~((S >= -scale) & (S <= limit + scale))
    if bad.any():
        b, j = (int(x) for x in np.argwhere(bad)[0])
        return CheckResult("slack_bounds", False, "slackness outside [0, K δ]",
                           {"node": j, "level": b, "S": float(S[b, j]), "K_delta": float(limit[0, j])})
    return CheckResult("slack_bounds", True, "0 <= S <= K_j δ wherever W is finite")


def check_paths(res: PlanResult) -> CheckResult:
    """Replay every front path: Φ = W, φ̂ <= b and b - φ = S."""
    j = res.goal
    for bp in res.front:
        try:
            p = extract_path(res.table, j, bp.level)
        except Exception as exc:  # broken chain in a corrupted table
            return CheckResult("path_replay", False, str(exc), {"level": bp.level})
        b = bp.budget
        ce = {"level": bp.level, "nodes": p.nodes, "W": bp.primary, "Phi": p.primary,
              "phi": p.secondary, "phi_hat": p.quantized_secondary, "S": bp.slackness}
        if not _close(p.primary, bp.primary):
            return CheckResult("path_replay", False, "replayed primary differs from W", ce)
        if p.quantized_secondary > b * (1 + REL_TOL) + REL_TOL:
            return CheckResult("path_replay", False, "quantized secondary exceeds the budget", ce)
        if not _close(b - p.secondary, bp.slackness):
            return CheckResult("path_replay", False, "b - φ differs from the reported slackness", ce)
    return CheckResult("path_replay", True, f"{len(res.front)} front paths replayed")


def check_shortcut_equivalence(res: PlanResult) -> CheckResult:
    ref = sweep(res.qgraph, res.qlabels, res.table.levels, shortcuts=not res.table.shortcuts)
    diff = np.argwhere(~((res.table.values == ref.values)
                         | (np.isnan(res.table.values) & np.isnan(ref.values))))
    if len(diff):
        b, j = (int(x) for x in diff[0])
        return CheckResult("shortcut_equivalence", False, f"{len(diff)} entries differ",
                           {"node": j, "level": b, "W": float(res.table.values[b, j]),
                            "W_other_mode": float(ref.values[b, j])})
    return CheckResult("shortcut_equivalence", True, "with and without shortcuts agree entrywise")


def check_causality(res: PlanResult, samples: int = 8, seed: int = 0) -> CheckResult:
    """Recompute sampled levels from the finished lower levels with the plain Bellman update."""
    g = res.graph
    q = res.qgraph.q
    W = res.table.values
    L = res.table.levels
    rng = np.random.default_rng(seed)
    picks = np.unique(rng.integers(1, L + 1, size=min(samples, L)))
    for b in picks:
        prev = np.full(g.n_edges, np.inf)
        ok = q <= b
        prev[ok] = W[b - q[ok], g.src[ok]] + g.primary[ok]
        best = np.full(g.n, np.inf)
        np.minimum.at(best, g.dst, prev)
        best[g.source] = 0.0
        both_inf = np.isinf(best) & np.isinf(W[b])
        bad = np.flatnonzero(~(both_inf | _close(best, W[b])))
        if len(bad):
            j = int(bad[0])
            return CheckResult("explicit_causality", False, "level not reproduced from lower levels",
                               {"node": j, "level": int(b), "W": float(W[b, j]), "recomputed": float(best[j])})
    return CheckResult("explicit_causality", True, f"levels {picks.tolist()} reproduced")


def check_labels(res: PlanResult) -> CheckResult:
    """U is a Bellman fixed point and V <= Ṽ, U <= Ũ."""
    g = res.graph
    lab = res.labels
    best = np.full(g.n, np.inf)
    np.minimum.at(best, g.dst, lab.U[g.src] + g.primary)
    best[g.source] = 0.0
    fin = np.isfinite(best) | np.isfinite(lab.U)
    bad = np.flatnonzero(fin & ~_close(best, lab.U))
    if len(bad):
        j = int(bad[0])
        return CheckResult("label_fixed_point", False, "U residual", {"node": j, "U": float(lab.U[j]),
                                                                      "bellman": float(best[j])})
    with np.errstate(invalid="ignore"):
        order = (lab.V <= lab.V_tilde * (1 + REL_TOL)) & (lab.U <= lab.U_tilde * (1 + REL_TOL))
    bad = np.flatnonzero(np.isfinite(lab.U) & ~order)
    if len(bad):
        return CheckResult("label_fixed_point", False, "tie-restricted value below its optimum",
                           {"node": int(bad[0])})
    return CheckResult("label_fixed_point", True, "U satisfies the Bellman system")


def check_oracle(res: PlanResult) -> CheckResult:
    """Conservativeness against exact constrained optima, equality for exact multiples."""
    g = res.graph
    W = res.table.values
    L = res.table.levels
    if g.n > ORACLE_MAX_NODES or W.size > ORACLE_MAX_ENTRIES:
        return CheckResult("oracle", None, f"instance too large for the exact oracle ({g.n} nodes)")
    delta = res.delta
    try:
        fronts = exact_pareto_all(g, budget_cap=L * delta * (1 + REL_TOL))
    except OracleError as exc:
        return CheckResult("oracle", None, str(exc))
    exact_multiple = bool(np.all(res.qgraph.q * delta == g.secondary))
    budgets = np.arange(L + 1) * delta * (1 + REL_TOL)
    worst = 0
    for j in range(g.n):
        if j == g.source:
            ref = np.zeros(L + 1)
        else:
            pts = fronts[j]
            phi = np.array([p.secondary for p in pts])
            Phi = np.minimum.accumulate(np.array([p.primary for p in pts])) if pts else np.array([])
            k = np.searchsorted(phi, budgets, side="right")
            ref = np.where(k > 0, Phi[np.maximum(k - 1, 0)] if len(Phi) else np.inf, np.inf)
        row = W[:, j]
        with np.errstate(invalid="ignore"):
            under = ref > row * (1 + REL_TOL) + REL_TOL
        if under.any():
            b = int(np.flatnonzero(under)[0])
            return CheckResult("oracle", False, "table value below the exact constrained optimum",
                               {"node": j, "level": b, "W": float(row[b]), "exact": float(ref[b])})
        if exact_multiple:
            same = (np.isinf(ref) & np.isinf(row)) | _close(ref, row)
            if not same.all():
                b = int(np.flatnonzero(~same)[0])
                return CheckResult("oracle", False, "exact-multiple costs but table differs from the optimum",
                                   {"node": j, "level": b, "W": float(row[b]), "exact": float(ref[b])})
            worst = max(worst, int(np.count_nonzero(np.abs(np.nan_to_num(res.table.slack[:, j])) > REL_TOL)))
    if exact_multiple and worst:
        return CheckResult("oracle", False, "exact-multiple costs but nonzero slackness", {})
    what = "equal to" if exact_multiple else "no better than"
    return CheckResult("oracle", True, f"every entry {what} the exact constrained optimum")


def check_predecessors(res: PlanResult) -> CheckResult:
    """Finite entries carry a predecessor (except at the source); infinite ones carry none."""
    W = res.table.values
    P = res.table.pred
    fin = np.isfinite(W)
    fin[:, res.graph.source] = False
    bad = np.argwhere(fin != (P != NO_EDGE))
    bad = bad[bad[:, 1] != res.graph.source]
    if len(bad):
        b, j = (int(x) for x in bad[0])
        return CheckResult("predecessors", False, "predecessor presence disagrees with finiteness",
                           {"node": j, "level": b})
    return CheckResult("predecessors", True, "predecessor links complete")


ALL_CHECKS = (check_labels, check_source, check_monotone, check_shortcut_values, check_predecessors,
              check_slack_bounds, check_paths, check_causality, check_shortcut_equivalence, check_oracle)


def run_checks(res: PlanResult, oracle: bool = True) -> List[CheckResult]:
    out = []
    for fn in ALL_CHECKS:
        if fn is check_oracle and not oracle:
            out.append(CheckResult("oracle", None, "disabled"))
            continue
        try:
            out.append(fn(res))
        except Exception as exc:  # a corrupted table can break a check outright
            out.append(CheckResult(fn.__name__.replace("check_", ""), False, f"check raised: {exc!r}"))
    return out


def report(results: List[CheckResult]) -> dict:
    return {
        "passed": all(r.passed is not False for r in results),
        "checks": [r.to_json() for r in results],
    }
