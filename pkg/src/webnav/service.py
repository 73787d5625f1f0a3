"""HTTP service exposing checking, trace retrieval, slicing and graphs.

Checks run asynchronously in worker threads; clients poll the job endpoint.
Jobs and traces are content-addressed, so submitting identical inputs twice
returns the same ids and reuses cached results.  Error bodies carry
machine-readable codes mirroring the CLI exit statuses.
"""

from __future__ import annotations

import hashlib
import threading
from importlib import resources
from typing import Optional

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .interchange import (
    InterchangeError,
    TraceStore,
    graph_to_doc,
    slice_to_doc,
    theory_from_trace_doc,
    trace_from_doc,
    trace_to_doc,
    verdict_to_doc,
)
from .ltlr import FormulaError, SearchBudget, check, parse_formula
from .navdsl import NavParseError, load_model
from .slicer import criterion_from_pattern, slice_trace
from .terms import APP, VAR, TermError


class CheckRequest(BaseModel):
    spec_source: str
    property: str
    max_states: int = 1_000_000
    max_depth: int = 500_000
    time_limit: Optional[float] = None


class SliceRequest(BaseModel):
    state_index: Optional[int] = None  # None selects the last state
    pattern: str


class GraphRequest(BaseModel):
    spec_source: str


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": {"code": code, "message": message}})


def _term_tree(t, pos=()):
    return {
        "op": t.op,
        "sort": t.sort,
        "kind": ("app" if t.kind == APP else
                 "var" if t.kind == VAR else "hole"),
        "pos": list(pos),
        "children": [_term_tree(a, pos + (i,))
                     for i, a in enumerate(t.args, 1)],
    }


def create_app(store_dir) -> FastAPI:
    app = FastAPI(title="webnav", version="1")
    store = TraceStore(store_dir)
    jobs: dict[str, dict] = {}
    jobs_lock = threading.Lock()
    # in-memory caches; eviction is not needed at this scale
    theories: dict[str, tuple] = {}
    slices: dict[tuple[str, str], dict] = {}

    def load_stored(tid: str):
        got = theories.get(tid)
        if got is None:
            doc = store.load(tid)
            theory = theory_from_trace_doc(doc)
            trace = trace_from_doc(doc, theory)
            got = (doc, theory, trace)
            theories[tid] = got
        return got

    def run_check(job_id: str, req: CheckRequest):
        try:
            theory = load_model(req.spec_source, name="model")
            known = {"curPage"} | set(theory.predicates)
            formula = parse_formula(req.property, known_predicates=known)
            verdict = check(theory, formula, budget=SearchBudget(
                max_states=req.max_states, max_depth=req.max_depth,
                time_limit=req.time_limit))
            trace_id = None
            if verdict.refuted:
                doc = trace_to_doc(verdict.counterexample, theory,
                                   model_source=req.spec_source,
                                   model_name=theory.name)
                trace_id = store.save(doc, verdict=verdict.outcome)
            result = verdict_to_doc(verdict, trace_id=trace_id)
            with jobs_lock:
                jobs[job_id] = {"status": "done", "verdict": result}
        except (NavParseError, FormulaError, TermError) as e:
            with jobs_lock:
                jobs[job_id] = {"status": "error",
                                "error": {"code": "parse-error",
                                          "message": str(e)}}
        except Exception as e:  # surfaced to the client, not swallowed
            with jobs_lock:
                jobs[job_id] = {"status": "error",
                                "error": {"code": "internal",
                                          "message": str(e)}}

    @app.post("/api/check")
    def submit_check(req: CheckRequest):
        payload = (f"{req.spec_source}\x00{req.property}\x00{req.max_states}"
                   f"\x00{req.max_depth}\x00{req.time_limit}")
        job_id = hashlib.sha256(payload.encode()).hexdigest()[:16]
        with jobs_lock:
            if job_id not in jobs:
                jobs[job_id] = {"status": "running"}
                t = threading.Thread(target=run_check, args=(job_id, req),
                                     daemon=True)
                t.start()
        return {"job_id": job_id}

    @app.get("/api/check/{job_id}")
    def poll_check(job_id: str):
        with jobs_lock:
            job = jobs.get(job_id)
        if job is None:
            return _error(404, "not-found", f"unknown job {job_id}")
        return job

    @app.get("/api/trace/{tid}")
    def trace_meta(tid: str):
        try:
            doc, theory, trace = load_stored(tid)
        except InterchangeError as e:
            return _error(404, "not-found", str(e))
        entry = {}
        try:
            entry = store.entry(tid)
        except InterchangeError:
            pass
        return {
            "trace_id": tid,
            "theory_hash": doc["theory_hash"],
            "property": doc.get("property", ""),
            "states": len(trace.states),
            "steps": [{"kind": s.kind, "label": s.label}
                      for s in trace.steps],
            "metadata": doc.get("metadata", {}),
            "index_entry": entry,
        }

    @app.get("/api/trace/{tid}/state/{index}")
    def trace_state(tid: str, index: int):
        try:
            _doc, _theory, trace = load_stored(tid)
        except InterchangeError as e:
            return _error(404, "not-found", str(e))
        if not (0 <= index < len(trace.states)):
            return _error(404, "not-found",
                          f"state {index} out of range")
        t = trace.states[index]
        return {"index": index, "rendered": t.render(),
                "symbols": t.symbol_count(), "tree": _term_tree(t)}

    @app.post("/api/trace/{tid}/slice")
    def slice_trace_ep(tid: str, req: SliceRequest):
        try:
            _doc, theory, trace = load_stored(tid)
        except InterchangeError as e:
            return _error(404, "not-found", str(e))
        idx = (req.state_index if req.state_index is not None
               else len(trace.states) - 1)
        if not (0 <= idx < len(trace.states)):
            return _error(400, "bad-request", f"state {idx} out of range")
        crit_key = hashlib.sha256(
            f"{idx}\x00{req.pattern}".encode()).hexdigest()[:16]
        cached = slices.get((tid, crit_key))
        if cached is not None:
            return cached
        try:
            crit = criterion_from_pattern(trace, idx, req.pattern, theory.sig)
        except TermError as e:
            return _error(400, "parse-error", f"bad pattern: {e}")
        sl = slice_trace(theory, trace, crit)
        out = slice_to_doc(sl, theory, trace_id=tid)
        out["criterion_hash"] = crit_key
        slices[(tid, crit_key)] = out
        return out

    @app.get("/api/trace/{tid}/graph")
    def trace_graph(tid: str):
        try:
            _doc, theory, _trace = load_stored(tid)
        except InterchangeError as e:
            return _error(404, "not-found", str(e))
        return graph_to_doc(theory)

    @app.post("/api/graph")
    def graph_of_spec(req: GraphRequest):
        try:
            theory = load_model(req.spec_source, name="model")
        except (NavParseError, TermError) as e:
            return _error(400, "parse-error", str(e))
        return graph_to_doc(theory)

    @app.get("/api/traces")
    def list_traces():
        return {"traces": [{"trace_id": tid, **store.entry(tid)}
                           for tid in store.ids()]}

    @app.get("/api/schemas/{name}")
    def get_schema(name: str):
        if not name.endswith(".json") or "/" in name or ".." in name:
            return _error(404, "not-found", "unknown schema")
        ref = resources.files("webnav") / "schemas" / name
        if not ref.is_file():
            return _error(404, "not-found", f"no schema {name}")
        import json as _json

        return _json.loads(ref.read_text())

    return app
