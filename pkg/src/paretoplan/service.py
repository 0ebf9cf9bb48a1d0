"""Session-oriented HTTP/JSON planning service.

A session owns a map, a threat set and a cached roadmap.  Plans and replans
reuse the roadmap; replanning only reassigns edge costs.  Each session admits
one running plan at a time; a second mutating request gets 409.
"""
from __future__ import annotations

import base64
import binascii
import json
import logging
import shutil
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel, ConfigDict, Field

from .budget_dp import BudgetError, PlanTimeout, UnreachableError
from .costs import CostError, CostModel, Threat, WeightedGraph, assign_costs
from .export import jsonable, paths_doc
from .geometry import MapFormatError, OccupancyGrid, load_grid
from .planner import PlanResult, solve
from .roadmap import Roadmap, RoadmapError, attach_node, build_prm

log = logging.getLogger(__name__)

MAX_MAP_BYTES = 16 * 1024 * 1024
PLAN_TIMEOUT = 30.0


class ThreatIn(BaseModel):
    model_config = ConfigDict(extra="forbid")
    p: Tuple[float, float]
    s: float = Field(gt=0)
    r: float = Field(default=0.0, ge=0)
    R: Optional[float] = None


class MapIn(BaseModel):
    model_config = ConfigDict(extra="forbid")
    pgm_base64: str
    resolution: float = Field(default=1.0, gt=0)
    origin: Tuple[float, float] = (0.0, 0.0)


class SessionIn(BaseModel):
    model_config = ConfigDict(extra="forbid")
    map: Optional[MapIn] = None
    graph: Optional[dict] = None
    threats: List[ThreatIn] = []
    source: Optional[Tuple[float, float]] = None
    goal: Optional[Tuple[float, float]] = None
    n_nodes: int = Field(default=1000, ge=0, le=200_000)
    connect_radius: float = Field(default=20.0, gt=0)
    robot_radius: float = Field(default=5.0, ge=0)
    seed: int = 0
    m: int = Field(default=64, ge=1)
    swap: bool = False
    visibility: bool = False
    epsilon: Optional[float] = Field(default=None, gt=0)
    quadrature_samples: int = Field(default=32, ge=2)


class PlanIn(BaseModel):
    model_config = ConfigDict(extra="forbid")
    goal: Optional[Tuple[float, float]] = None
    goal_node: Optional[int] = None
    m: Optional[int] = Field(default=None, ge=1)
    budget: Optional[float] = Field(default=None, ge=0)
    delta: Optional[float] = Field(default=None, gt=0)
    background: bool = False


class ReplanIn(BaseModel):
    model_config = ConfigDict(extra="forbid")
    threats: Optional[List[ThreatIn]] = None
    m: Optional[int] = Field(default=None, ge=1)
    budget: Optional[float] = Field(default=None, ge=0)
    background: bool = False


class SelectIn(BaseModel):
    model_config = ConfigDict(extra="forbid")
    k: int


def _threats(items: List[ThreatIn]) -> List[Threat]:
    return [Threat.from_dict(t.model_dump()) for t in items]


@dataclass
class Session:
    id: str
    params: dict
    threats: List[Threat]
    grid: Optional[OccupancyGrid]
    roadmap: Optional[Roadmap]  # None in graph-input mode
    graph: WeightedGraph
    map_bytes: Optional[bytes] = None
    result: Optional[PlanResult] = None
    plan_params: dict = field(default_factory=dict)
    selected: Optional[int] = None
    state: str = "idle"  # idle | running | done | error
    progress: float = 0.0
    error: Optional[str] = None
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    created: float = field(default_factory=time.time)

    @property
    def digest(self) -> str:
        return self.roadmap.digest() if self.roadmap is not None else self.graph.digest()

    def cost_model(self) -> CostModel:
        p = self.params
        return CostModel(self.threats, p["quadrature_samples"], p["visibility"], p["epsilon"], p["swap"])

    def reweight(self) -> None:
        if self.roadmap is not None:
            self.graph = assign_costs(self.roadmap, self.cost_model(), self.grid)

    def front_doc(self) -> dict:
        res = self.result
        doc = {"session": self.id, "roadmap_hash": self.digest, "state": self.state}
        if res is None:
            return doc
        summary = res.summary()
        summary["paths"] = list(range(len(res.front)))
        for k, row in enumerate(summary["front"]):
            row["path_id"] = k
        doc.update(summary)
        doc["selected"] = self.selected
        return doc

    def describe(self) -> dict:
        p = dict(self.params)
        p["threats"] = [t.to_dict() for t in self.threats]
        doc = {
            "id": self.id,
            "config": p,
            "roadmap_hash": self.digest,
            "graph": {"n_nodes": self.graph.n, "n_edges": self.graph.n_edges,
                      "source": self.graph.source, "goal": self.graph.goal},
            "state": self.state,
            "selected": self.selected,
            "has_plan": self.result is not None,
        }
        if self.grid is not None:
            doc["map"] = {"width": self.grid.width, "height": self.grid.height,
                          "resolution": self.grid.resolution, "origin": list(self.grid.origin)}
        return doc


class SessionStore:
    def __init__(self, data_dir: Optional[str] = None):
        self.sessions: Dict[str, Session] = {}
        self.guard = threading.Lock()
        self.data_dir = Path(data_dir) if data_dir else None
        if self.data_dir is not None:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            self._load_all()

    def add(self, s: Session) -> None:
        with self.guard:
            self.sessions[s.id] = s
        self.persist(s)

    def get(self, sid: str) -> Session:
        with self.guard:
            s = self.sessions.get(sid)
        if s is None:
            raise HTTPException(404, f"unknown session {sid}")
        return s

    def delete(self, sid: str) -> None:
        with self.guard:
            if self.sessions.pop(sid, None) is None:
                raise HTTPException(404, f"unknown session {sid}")
        if self.data_dir is not None:
            shutil.rmtree(self.data_dir / sid, ignore_errors=True)

    def persist(self, s: Session) -> None:
        if self.data_dir is None:
            return
        d = self.data_dir / s.id
        d.mkdir(exist_ok=True)
        manifest = s.describe()
        manifest["plan_params"] = s.plan_params
        (d / "manifest.json").write_text(json.dumps(jsonable(manifest), indent=2))
        if s.roadmap is not None:
            (d / "roadmap.json").write_text(json.dumps(s.roadmap.to_json()))
        else:
            (d / "graph.json").write_text(json.dumps(s.graph.to_json()))
        if s.map_bytes is not None and not (d / "map.pgm").exists():
            (d / "map.pgm").write_bytes(s.map_bytes)

    def _load_all(self) -> None:
        for d in sorted(self.data_dir.iterdir()):
            try:
                self.sessions[d.name] = self._load(d)
            except Exception as exc:
                log.warning("skipping unreadable session %s: %s", d.name, exc)

    def _load(self, d: Path) -> Session:
        man = json.loads((d / "manifest.json").read_text())
        params = dict(man["config"])
        threats = [Threat.from_dict(t) for t in params.pop("threats")]
        if (d / "roadmap.json").exists():
            grid = load_grid((d / "map.pgm").read_bytes(), man["map"]["resolution"],
                             tuple(man["map"]["origin"]))
            rm = Roadmap.from_json(json.loads((d / "roadmap.json").read_text()))
            s = Session(d.name, params, threats, grid, rm, None, (d / "map.pgm").read_bytes())
            s.reweight()
        else:
            g = WeightedGraph.from_json(json.loads((d / "graph.json").read_text()))
            s = Session(d.name, params, threats, None, None, g)
        s.selected = man.get("selected")
        s.plan_params = man.get("plan_params", {})
        if s.plan_params:
            try:
                s.result = _run_plan(s, s.plan_params, None)
                s.state = "done"
            except Exception as exc:
                s.state, s.error = "error", str(exc)
        return s


def _run_plan(s: Session, params: dict, deadline: Optional[float]) -> PlanResult:
    def progress(f):
        s.progress = f
    return solve(s.graph, goal=s.graph.goal, m=params.get("m") or s.params["m"],
                 delta=params.get("delta"), budget=params.get("budget"), deadline=deadline,
                 progress=progress)


def create_app(data_dir: Optional[str] = None, ui_dir: Optional[str] = None,
               max_map_bytes: int = MAX_MAP_BYTES, plan_timeout: float = PLAN_TIMEOUT) -> FastAPI:
    app = FastAPI(title="paretoplan", version="0.1.0")
    store = SessionStore(data_dir)
    app.state.store = store

    @app.exception_handler(RequestValidationError)
    async def bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": jsonable(exc.errors())})

    def plan_errors(exc: Exception) -> HTTPException:
        if isinstance(exc, UnreachableError):
            return HTTPException(422, str(exc))
        if isinstance(exc, PlanTimeout):
            return HTTPException(504, str(exc))
        if isinstance(exc, (BudgetError, CostError, RoadmapError)):
            return HTTPException(422, str(exc))
        return HTTPException(500, f"{type(exc).__name__}: {exc}")

    def execute(s: Session, params: dict, background: bool):
        """Run a plan holding the session lock; the caller already acquired it."""
        deadline = time.perf_counter() + plan_timeout

        def work():
            try:
                s.result = _run_plan(s, params, deadline)
                s.plan_params = params
                s.selected = None
                s.state, s.error, s.progress = "done", None, 1.0
                store.persist(s)
            except Exception as exc:
                s.state, s.error = "error", str(exc)
                raise
            finally:
                s.lock.release()

        s.state, s.progress, s.error = "running", 0.0, None
        if background:
            def guarded():
                try:
                    work()
                except Exception:
                    log.exception("background plan failed for session %s", s.id)
            threading.Thread(target=guarded, daemon=True).start()
            return JSONResponse(status_code=202, content={"session": s.id, "state": "running",
                                                          "status": f"/sessions/{s.id}/status"})
        try:
            work()
        except Exception as exc:
            raise plan_errors(exc) from exc
        return jsonable(s.front_doc())

    def acquire(s: Session) -> None:
        if not s.lock.acquire(blocking=False):
            raise HTTPException(409, "a plan is already running for this session")

    @app.get("/health")
    def health():
        return {"status": "ok", "sessions": len(store.sessions)}

    @app.post("/sessions", status_code=201)
    def create_session(body: SessionIn):
        if (body.map is None) == (body.graph is None):
            raise HTTPException(400, "provide exactly one of 'map' or 'graph'")
        params = body.model_dump(exclude={"map", "graph", "threats"})
        try:
            threats = _threats(body.threats)
        except CostError as exc:
            raise HTTPException(400, str(exc))
        sid = uuid.uuid4().hex
        if body.graph is not None:
            try:
                g = WeightedGraph.from_json(body.graph)
            except (KeyError, TypeError, ValueError) as exc:
                raise HTTPException(400, f"malformed graph: {exc}")
            if body.swap:
                g = g.swapped()
            s = Session(sid, params, threats, None, None, g)
        else:
            if len(body.map.pgm_base64) > 4 * (max_map_bytes // 3 + 1):
                raise HTTPException(413, "map exceeds the upload limit")
            try:
                raw = base64.b64decode(body.map.pgm_base64, validate=True)
            except (binascii.Error, ValueError):
                raise HTTPException(400, "map is not valid base64")
            if len(raw) > max_map_bytes:
                raise HTTPException(413, "map exceeds the upload limit")
            try:
                grid = load_grid(raw, body.map.resolution, body.map.origin)
            except MapFormatError as exc:
                raise HTTPException(400, f"malformed map: {exc}")
            if body.source is None:
                raise HTTPException(400, "'source' is required with a map")
            if not threats:
                raise HTTPException(400, "at least one threat is required with a map")
            params.update(resolution=body.map.resolution, origin=list(body.map.origin))
            goal = body.goal if body.goal is not None else body.source
            try:
                rm = build_prm(grid, body.n_nodes, body.connect_radius, body.robot_radius,
                               body.seed, body.source, goal)
            except RoadmapError as exc:
                raise HTTPException(422, str(exc))
            s = Session(sid, params, threats, grid, rm, None, raw)
            try:
                s.reweight()
            except CostError as exc:
                raise HTTPException(422, str(exc))
        store.add(s)
        return jsonable(s.describe())

    @app.get("/sessions")
    def list_sessions():
        return {"sessions": sorted(store.sessions)}

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        return jsonable(store.get(sid).describe())

    @app.delete("/sessions/{sid}", status_code=204)
    def delete_session(sid: str):
        store.delete(sid)
        return Response(status_code=204)

    @app.get("/sessions/{sid}/status")
    def status(sid: str):
        s = store.get(sid)
        return {"session": s.id, "state": s.state, "progress": s.progress, "error": s.error,
                "has_plan": s.result is not None}

    @app.post("/sessions/{sid}/plan")
    def plan(sid: str, body: PlanIn):
        s = store.get(sid)
        acquire(s)
        try:
            if body.goal is not None and body.goal_node is not None:
                raise HTTPException(400, "give either 'goal' or 'goal_node'")
            if body.goal_node is not None:
                if not 0 <= body.goal_node < s.graph.n:
                    raise HTTPException(422, f"goal node {body.goal_node} out of range")
                s.graph = s.graph.with_goal(body.goal_node)
                if s.roadmap is not None:
                    s.roadmap = Roadmap.from_edges(s.roadmap.nodes,
                                                   np.column_stack([s.roadmap.src, s.roadmap.dst]),
                                                   s.roadmap.source, body.goal_node)
            elif body.goal is not None:
                if s.roadmap is None:
                    raise HTTPException(422, "graph-input sessions take 'goal_node', not coordinates")
                p = s.params
                try:
                    s.roadmap, _ = attach_node(s.roadmap, s.grid, body.goal, p["connect_radius"],
                                               p["robot_radius"])
                except RoadmapError as exc:
                    raise HTTPException(422, str(exc))
                s.reweight()
        except BaseException:
            s.lock.release()
            raise
        params = {"m": body.m, "budget": body.budget, "delta": body.delta}
        return execute(s, params, body.background)

    @app.post("/sessions/{sid}/replan")
    def replan(sid: str, body: ReplanIn):
        s = store.get(sid)
        acquire(s)
        try:
            if body.threats is not None:
                if s.roadmap is None:
                    raise HTTPException(422, "graph-input sessions have fixed edge costs")
                try:
                    threats = _threats(body.threats)
                except CostError as exc:
                    raise HTTPException(400, str(exc))
                if not threats:
                    raise HTTPException(400, "at least one threat is required")
                s.threats = threats
                s.reweight()
        except BaseException:
            s.lock.release()
            raise
        params = dict(s.plan_params)
        if body.m is not None:
            params["m"] = body.m
        if body.budget is not None:
            params["budget"] = body.budget
        return execute(s, params, body.background)

    def planned(s: Session) -> PlanResult:
        if s.result is None:
            raise HTTPException(404, "no plan has completed for this session")
        return s.result

    @app.get("/sessions/{sid}/front")
    def front(sid: str):
        s = store.get(sid)
        planned(s)
        return jsonable(s.front_doc())

    @app.get("/sessions/{sid}/paths")
    def paths(sid: str):
        s = store.get(sid)
        return jsonable(paths_doc(planned(s)))

    @app.get("/sessions/{sid}/paths/{k}")
    def path(sid: str, k: int):
        s = store.get(sid)
        docs = paths_doc(planned(s))
        if not 0 <= k < len(docs):
            raise HTTPException(404, f"unknown path {k}")
        doc = docs[k]
        doc["selected"] = s.selected == k
        return jsonable(doc)

    @app.post("/sessions/{sid}/select")
    def select(sid: str, body: SelectIn):
        s = store.get(sid)
        res = planned(s)
        if not 0 <= body.k < len(res.front):
            raise HTTPException(404, f"unknown path {body.k}")
        s.selected = body.k
        store.persist(s)
        return {"session": s.id, "selected": body.k}

    @app.get("/sessions/{sid}/roadmap")
    def roadmap(sid: str):
        s = store.get(sid)
        doc = s.roadmap.to_json() if s.roadmap is not None else s.graph.to_json()
        doc["hash"] = s.digest
        return jsonable(doc)

    @app.get("/sessions/{sid}/map")
    def get_map(sid: str):
        s = store.get(sid)
        if s.grid is None:
            raise HTTPException(404, "graph-input session has no map")
        return Response(content=s.grid.to_pgm(), media_type="image/x-portable-graymap")

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
