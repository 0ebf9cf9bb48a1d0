"""Bi-criteria path planning by budget-augmented dynamic programming."""

__version__ = "0.1.0"

from .budget_dp import (BudgetTable, ParetoFront, UnreachableError, extract_pareto, extract_path,
                        quantize, sweep)
from .costs import CostModel, Threat, WeightedGraph, assign_costs
from .geometry import OccupancyGrid, load_grid
from .planner import PlanResult, solve
from .roadmap import Roadmap, build_prm
from .scalar_sp import scalar_labels

__all__ = [
    "BudgetTable", "CostModel", "OccupancyGrid", "ParetoFront", "PlanResult", "Roadmap", "Threat",
    "UnreachableError", "WeightedGraph", "assign_costs", "build_prm", "extract_pareto", "extract_path",
    "load_grid", "quantize", "scalar_labels", "solve", "sweep",
]
