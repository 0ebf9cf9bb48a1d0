"""Instance generators used by the tests, the acceptance suite and benchmarks."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .costs import CostModel, Threat, WeightedGraph, assign_costs
from .geometry import OccupancyGrid
from .roadmap import build_prm


def two_path_graph(top=(1.4, 1.4), bottom=3.0) -> WeightedGraph:
    """x0 -> x1 -> x2 (top) against x0 -> x2 (bottom), with C = c on every edge."""
    a, b = top
    nodes = [[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]]
    return WeightedGraph.from_edges(3, [(0, 1, a, a), (1, 2, b, b), (0, 2, bottom, bottom)],
                                    source=0, goal=2, positions=nodes)


def nonconvex_graph() -> WeightedGraph:
    """Three disjoint two-edge routes with totals (Φ, φ) = (2, 20), (12, 12), (20, 2).

    The middle route is Pareto-optimal but lies above the segment joining the
    other two, so no weighted sum ever prefers it.
    """
    rows = []
    for mid, (C, c) in zip((1, 2, 3), ((1.0, 10.0), (6.0, 6.0), (10.0, 1.0))):
        rows += [(0, mid, C, c), (mid, 4, C, c)]
    pos = [[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [1.0, -1.0], [2.0, 0.0]]
    return WeightedGraph.from_edges(5, rows, source=0, goal=4, positions=pos)


def random_graph(rng: np.random.Generator, n: int, p: float = 0.2, integer_secondary: bool = False,
                 max_cost: float = 10.0, source: int = 0, goal: Optional[int] = None) -> WeightedGraph:
    """Erdős–Rényi digraph plus a random chain through all nodes (so every node is reachable).

    Primary costs are uniform in [1, max_cost]; secondary costs likewise, or
    integers in 1..max_cost when ``integer_secondary`` is set.
    """
    if n < 2:
        raise ValueError("need at least two nodes")
    goal = n - 1 if goal is None else goal
    mask = rng.random((n, n)) < p
    np.fill_diagonal(mask, False)
    chain = np.concatenate(([source], rng.permutation([k for k in range(n) if k != source])))
    mask[chain[:-1], chain[1:]] = True
    src, dst = np.nonzero(mask)
    C = rng.uniform(1.0, max_cost, len(src))
    if integer_secondary:
        c = rng.integers(1, int(max_cost) + 1, len(src)).astype(float)
    else:
        c = rng.uniform(1.0, max_cost, len(src))
    return WeightedGraph.from_edges(n, np.column_stack([src, dst, C, c]), source, goal)


def desk_scale_instance(n_nodes: int = 8000, seed: int = 0, side: float = 100.0,
                        connect_radius: float = 2.43, robot_radius: float = 0.5) -> WeightedGraph:
    """PRM on an empty square room with one threat at its centre.

    At the default density this yields roughly 8,000 nodes and 116,000 directed edges.
    """
    grid = OccupancyGrid(np.zeros((int(side), int(side)), dtype=bool), resolution=1.0)
    rm = build_prm(grid, n_nodes - 2, connect_radius, robot_radius, seed,
                   source=(5.0, 5.0), goal=(side - 5.0, side - 5.0))
    model = CostModel(threats=[Threat((side / 2, side / 2), s=1.0, r=1.0)])
    return assign_costs(rm, model, grid)
