"""Planner configuration: a flat TOML file plus command-line overrides."""
from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .costs import CostModel, Threat, WeightedGraph, assign_costs
from .geometry import OccupancyGrid, load_grid
from .roadmap import Roadmap, build_prm


class ConfigError(ValueError):
    pass


@dataclass
class PlannerConfig:
    map: Optional[str] = None
    resolution: float = 1.0
    origin: Tuple[float, float] = (0.0, 0.0)
    robot_radius: float = 5.0
    threats: List[Threat] = field(default_factory=list)
    source: Optional[Tuple[float, float]] = None
    goal: Optional[Tuple[float, float]] = None
    n_nodes: int = 1000
    connect_radius: float = 20.0
    seed: int = 0
    m: int = 64
    budget: Optional[float] = None
    delta: Optional[float] = None
    swap: bool = False
    visibility: bool = False
    epsilon: Optional[float] = None
    quadrature_samples: int = 32
    spacing: Optional[float] = None
    tie_tol: float = 1e-9
    max_table_entries: int = 60_000_000
    graph: Optional[str] = None  # graph-input mode: JSON node/edge/cost list, bypasses map and PRM
    output: str = "out"

    def validate(self) -> "PlannerConfig":
        if self.graph is None:
            if self.map is None:
                raise ConfigError("either 'map' or 'graph' must be set")
            if self.source is None or self.goal is None:
                raise ConfigError("'source' and 'goal' are required with a map")
        for name in ("map", "graph"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"{name} file not found: {p}")
        checks = [
            ("resolution", self.resolution > 0),
            ("robot_radius", self.robot_radius >= 0),
            ("n_nodes", self.n_nodes >= 0),
            ("connect_radius", self.connect_radius > 0),
            ("m", self.m >= 1),
            ("quadrature_samples", self.quadrature_samples >= 2),
            ("tie_tol", 0 <= self.tie_tol < 1e-3),
            ("max_table_entries", self.max_table_entries >= 1),
            ("budget", self.budget is None or self.budget >= 0),
            ("delta", self.delta is None or (self.delta > 0 and math.isfinite(self.delta))),
            ("epsilon", self.epsilon is None or self.epsilon > 0),
            ("spacing", self.spacing is None or self.spacing > 0),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"{name} out of range: {getattr(self, name)!r}")
        return self

    def cost_model(self) -> CostModel:
        return CostModel(self.threats, self.quadrature_samples, self.visibility, self.epsilon, self.swap)

    def to_json(self) -> dict:
        d = asdict(self)
        d["threats"] = [t.to_dict() for t in self.threats]
        for k in ("origin", "source", "goal"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d


FIELD_NAMES = {f.name for f in fields(PlannerConfig)}
_POINTS = ("origin", "source", "goal")


def _coerce(raw: dict, base_dir: Optional[Path]) -> dict:
    unknown = set(raw) - FIELD_NAMES
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for k, v in raw.items():
        if v is None:
            out[k] = None
        elif k == "threats":
            try:
                out[k] = [v_ if isinstance(v_, Threat) else Threat.from_dict(v_) for v_ in v]
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad threat entry: {exc}") from exc
        elif k in _POINTS:
            if len(v) != 2:
                raise ConfigError(f"{k} must be a pair of coordinates")
            out[k] = (float(v[0]), float(v[1]))
        elif k in ("map", "graph", "output"):
            p = Path(v)
            if base_dir is not None and not p.is_absolute() and k != "output":
                p = base_dir / p
            out[k] = str(p)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides: Optional[dict] = None) -> PlannerConfig:
    """Read a TOML file (keys relative to its directory) and apply non-None overrides."""
    raw = {}
    base = None
    if path is not None:
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text())
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        base = path.parent
    values = _coerce(raw, base)
    if overrides:
        values.update(_coerce({k: v for k, v in overrides.items() if v is not None}, None))
    try:
        cfg = PlannerConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


@dataclass
class Instance:
    graph: WeightedGraph
    roadmap: Optional[Roadmap] = None
    grid: Optional[OccupancyGrid] = None


def load_map(cfg: PlannerConfig) -> OccupancyGrid:
    return load_grid(Path(cfg.map).read_bytes(), cfg.resolution, cfg.origin)


def build_instance(cfg: PlannerConfig, n_nodes: Optional[int] = None) -> Instance:
    """Weighted graph for a config: read directly in graph-input mode, else PRM plus costs."""
    if cfg.graph is not None:
        import json
        g = WeightedGraph.from_json(json.loads(Path(cfg.graph).read_text()))
        return Instance(g.swapped() if cfg.swap else g)
    grid = load_map(cfg)
    rm = build_prm(grid, cfg.n_nodes if n_nodes is None else n_nodes, cfg.connect_radius,
                   cfg.robot_radius, cfg.seed, cfg.source, cfg.goal, cfg.spacing)
    return Instance(assign_costs(rm, cfg.cost_model(), grid), rm, grid)
