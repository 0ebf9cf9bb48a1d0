"""File outputs: pareto.csv, paths.json, roadmap.json, manifest.json."""
from __future__ import annotations

import csv
import json
import math
import platform
from pathlib import Path
from typing import List

import numpy as np

from .costs import WeightedGraph
from .planner import PlanResult

CSV_COLUMNS = ("level_index", "budget", "primary_cost", "slackness", "true_secondary_cost")


def fmt(x) -> str:
    """12 significant digits, '.' separator; integers stay integers."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".12g")


def jsonable(obj):
    """Plain JSON types; non-finite floats become the strings 'inf', '-inf', 'nan'."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(jsonable(doc), indent=2, sort_keys=False) + "\n")


def pareto_csv(rows: List[dict]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in rows:
        lines.append(",".join(fmt(r[c]) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def write_pareto_csv(path, rows: List[dict]) -> None:
    Path(path).write_text(pareto_csv(rows))


def read_pareto_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        out = []
        for r in csv.DictReader(fh):
            out.append({k: (int(v) if k == "level_index" else float(v)) for k, v in r.items()})
        return out


def paths_doc(res: PlanResult) -> list:
    out = []
    for k, (bp, p) in enumerate(zip(res.front, res.paths)):
        d = p.to_json(res.graph)
        d["k"] = k
        d["budget"] = bp.budget
        out.append(d)
    return out


def graph_stats(g: WeightedGraph) -> dict:
    deg = np.diff(g.indptr)
    return {
        "n_nodes": g.n,
        "n_edges": g.n_edges,
        "max_in_degree": int(deg.max(initial=0)),
        "mean_in_degree": float(deg.mean()) if g.n else 0.0,
    }


def manifest(res: PlanResult, config: dict, extra: dict = None) -> dict:
    from . import __version__
    doc = {
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": config,
        "graph": graph_stats(res.graph),
        "plan": {k: v for k, v in res.summary().items() if k != "front"},
        "front_size": len(res.front),
        "timings": res.timings,
    }
    if extra:
        doc.update(extra)
    return doc


def write_run(out_dir, res: PlanResult, config: dict, roadmap_doc: dict, extra: dict = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_pareto_csv(out / "pareto.csv", res.rows())
    write_json(out / "paths.json", paths_doc(res))
    write_json(out / "roadmap.json", roadmap_doc)
    write_json(out / "manifest.json", manifest(res, config, extra))
    return out
