"""Command-line entry point: plan, convergence, nodes, verify, serve."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .budget_dp import RefinementRound, refinement_diagnostics
from .config import ConfigError, PlannerConfig, build_instance, load_config
from .costs import Threat
from .export import jsonable, pareto_csv, write_json, write_pareto_csv, write_run
from .planner import solve

log = logging.getLogger("paretoplan")


def _point(text: str):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected x,y got {text!r}")
    return tuple(parts)


def _threat(text: str) -> Threat:
    """x,y,s[,r[,R]]"""
    parts = [float(v) for v in text.split(",")]
    if not 3 <= len(parts) <= 5:
        raise argparse.ArgumentTypeError(f"expected x,y,s[,r[,R]] got {text!r}")
    kw = {"p": parts[:2], "s": parts[2]}
    if len(parts) > 3:
        kw["r"] = parts[3]
    if len(parts) > 4:
        kw["R"] = parts[4]
    return Threat.from_dict(kw)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", help="TOML config file")
    p.add_argument("--map")
    p.add_argument("--graph", help="JSON graph input (bypasses map and roadmap)")
    p.add_argument("--resolution", type=float)
    p.add_argument("--origin", type=_point)
    p.add_argument("--robot-radius", type=float)
    p.add_argument("--threat", dest="threats", type=_threat, action="append",
                   help="x,y,s[,r[,R]]; repeatable, replaces config threats")
    p.add_argument("--source", type=_point)
    p.add_argument("--goal", type=_point)
    p.add_argument("--n-nodes", type=int)
    p.add_argument("--connect-radius", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--budget", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--swap", action="store_const", const=True)
    p.add_argument("--visibility", action="store_const", const=True)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--quadrature-samples", type=int)
    p.add_argument("--spacing", type=float)
    p.add_argument("--tie-tol", type=float)
    p.add_argument("--max-table-entries", type=int)
    p.add_argument("--output", "-o")


_OVERRIDES = ("map", "graph", "resolution", "origin", "robot_radius", "threats", "source", "goal",
              "n_nodes", "connect_radius", "seed", "m", "budget", "delta", "swap", "visibility",
              "epsilon", "quadrature_samples", "spacing", "tie_tol", "max_table_entries", "output")


def config_from_args(args) -> PlannerConfig:
    overrides = {k: getattr(args, k, None) for k in _OVERRIDES}
    return load_config(args.config, overrides)


def _roadmap_doc(inst) -> dict:
    if inst.roadmap is not None:
        doc = inst.roadmap.to_json()
        doc["digest"] = inst.roadmap.digest()
    else:
        doc = inst.graph.to_json()
        doc["digest"] = inst.graph.digest()
    return doc


def _solve(cfg: PlannerConfig, inst, m: Optional[int] = None, delta: Optional[float] = None):
    return solve(inst.graph, m=cfg.m if m is None else m, delta=cfg.delta if delta is None else delta,
                 budget=cfg.budget, tie_tol=cfg.tie_tol, max_entries=cfg.max_table_entries)


def cmd_plan(args) -> int:
    cfg = config_from_args(args)
    inst = build_instance(cfg)
    res = _solve(cfg, inst)
    out = write_run(cfg.output, res, cfg.to_json(), _roadmap_doc(inst),
                    {"roadmap_digest": _roadmap_doc(inst)["digest"]})
    sys.stdout.write(pareto_csv(res.rows()))
    log.info("wrote %s (%d breakpoints)", out, len(res.front))
    return 0


def cmd_convergence(args) -> int:
    cfg = config_from_args(args)
    inst = build_instance(cfg)
    g = inst.graph
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    rounds = []
    labels = None
    for k in range(args.rounds):
        m = args.m_start * 2 ** k
        res = solve(g, m=m, tie_tol=cfg.tie_tol, max_entries=cfg.max_table_entries, labels=labels)
        labels = res.labels
        write_pareto_csv(out / f"pareto_m{m}.csv", res.rows())
        rounds.append(RefinementRound(m, res.delta, res.table, res.front, res.K,
                                      res.timings["quantize"] + res.timings["sweep"]))
    diag = refinement_diagnostics(rounds, g.goal)
    if args.oracle:
        diag["oracle"] = oracle_closeness(g, rounds[-1])
    write_json(out / "convergence.json", diag)
    json.dump(jsonable(diag), sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def oracle_closeness(g, last: RefinementRound) -> dict:
    """Compare the finest front with the exact front: matching Φ values and budget displacement."""
    import math
    from .oracle import exact_pareto
    exact = exact_pareto(g)
    bps = list(last.front)
    exact_phi = [p.primary for p in exact]
    missing = [(p.primary, p.secondary) for p in exact
               if not any(math.isclose(bp.primary, p.primary, rel_tol=1e-9) for bp in bps)]
    extra = [(bp.primary, bp.budget) for bp in bps
             if not any(math.isclose(bp.primary, v, rel_tol=1e-9) for v in exact_phi)]
    disp = []
    for bp in bps:
        for p in exact:
            if math.isclose(bp.primary, p.primary, rel_tol=1e-9):
                disp.append(bp.budget - p.secondary)
    bound = last.K * last.delta
    return {
        "exact_size": len(exact),
        "front_size": len(bps),
        "missing": missing,
        "extra": extra,
        "max_displacement": max(disp) if disp else None,
        "displacement_bound": bound,
        "converged": not missing and not extra and all(-1e-9 <= d <= bound * (1 + 1e-9) for d in disp),
    }


def cmd_nodes(args) -> int:
    cfg = config_from_args(args)
    if cfg.graph is not None:
        raise ConfigError("the nodes study needs a map, not graph input")
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for n in args.node_counts:
        inst = build_instance(cfg, n_nodes=n)
        res = _solve(cfg, inst)
        write_pareto_csv(out / f"pareto_n{n}.csv", res.rows())
        summary.append({"n_nodes": n, "graph_nodes": inst.graph.n, "edges": inst.graph.n_edges,
                        "front_size": len(res.front), "delta": res.delta, "timings": res.timings,
                        "roadmap_digest": inst.roadmap.digest()})
    write_json(out / "nodes.json", summary)
    json.dump(jsonable(summary), sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def cmd_verify(args) -> int:
    from .verify import report, run_checks
    cfg = config_from_args(args)
    inst = build_instance(cfg)
    res = _solve(cfg, inst)
    rep = report(run_checks(res, oracle=not args.no_oracle))
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "verify.json", rep)
    for c in rep["checks"]:
        print(f"{c['status'].upper():4}  {c['name']}: {c['detail']}")
        if c["status"] == "fail":
            print("      counterexample: " + json.dumps(jsonable(c["counterexample"])))
    return 1 if (args.strict and not rep["passed"]) else 0


def cmd_serve(args) -> int:
    import uvicorn
    from .service import create_app
    app = create_app(data_dir=args.data_dir, ui_dir=args.ui_dir, max_map_bytes=args.max_map_bytes,
                     plan_timeout=args.plan_timeout)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="paretoplan", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="build, solve, write pareto.csv / paths.json / roadmap.json / manifest.json")
    _add_config_flags(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("convergence", help="fronts for m, 2m, 4m, ... with refinement diagnostics")
    _add_config_flags(p)
    p.add_argument("--m-start", type=int, default=64)
    p.add_argument("--rounds", type=int, default=4)
    p.add_argument("--oracle", action="store_true", help="compare the finest front with the exact front")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("nodes", help="fronts for several roadmap sizes")
    _add_config_flags(p)
    p.add_argument("--node-counts", type=lambda s: [int(v) for v in s.split(",")], required=True)
    p.set_defaults(func=cmd_nodes)

    p = sub.add_parser("verify", help="run the invariant checks on the configured instance")
    _add_config_flags(p)
    p.add_argument("--no-oracle", action="store_true")
    p.add_argument("--strict", action="store_true", help="exit 1 when any check fails")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("serve", help="HTTP/JSON planning service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ui-dir", help="directory with a built UI bundle to serve at /")
    p.add_argument("--data-dir", help="persist sessions here")
    p.add_argument("--max-map-bytes", type=int, default=16 * 1024 * 1024)
    p.add_argument("--plan-timeout", type=float, default=30.0)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "rounds", 1) < 1:
        parser.error("--rounds must be >= 1")
    try:
        return args.func(args)
    except Exception as exc:
        if args.verbose:
            raise
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
