"""Serialization of traces, verdicts, slices and graphs, plus the trace store.

Documents are plain JSON objects tagged with a versioned `schema` field; the
matching JSON-schema files ship in the package's schemas/ directory.  Trace
documents embed the navigation-model source so they are self-contained: a
stored counterexample can be reloaded, replayed and sliced without the
original model file.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from pathlib import Path
from typing import Optional

from .ltlr import Verdict
from .rewrite import RewriteStep, Theory, Trace, replay_trace
from .slicer import SlicedTrace, SlicingCriterion
from .terms import Position, Reshape, Signature, Substitution, parse_term

TRACE_SCHEMA = "webnav-trace/1"
VERDICT_SCHEMA = "webnav-verdict/1"
SLICE_SCHEMA = "webnav-slice/1"
GRAPH_SCHEMA = "webnav-graph/1"


class InterchangeError(Exception):
    pass


def _pos(p: Position) -> list[int]:
    return list(p)


def _unpos(v) -> Position:
    return tuple(int(x) for x in v)


def _reshape_to_doc(r: Reshape) -> dict:
    return {
        "skeleton": r.skeleton.render(),
        "skeleton_sort": r.skeleton.sort,
        "pairs": [{"sources": [_pos(s) for s in srcs], "dest": _pos(d)}
                  for srcs, d in r.pairs],
        "node_src": [[_pos(d), _pos(s)] for d, s in r.node_src],
    }


def _reshape_from_doc(doc: dict, sig: Signature) -> Reshape:
    skel = parse_term(doc["skeleton"], sig, expected_sort=doc["skeleton_sort"],
                      canonical=False, allow_holes=True)
    pairs = tuple((tuple(_unpos(s) for s in e["sources"]), _unpos(e["dest"]))
                  for e in doc["pairs"])
    node_src = tuple((_unpos(d), _unpos(s)) for d, s in doc["node_src"])
    return Reshape(skel, pairs, node_src)


def _step_to_doc(step: RewriteStep) -> dict:
    doc: dict = {"kind": step.kind, "label": step.label, "pos": _pos(step.pos)}
    if step.matcher is not None:
        doc["matcher"] = {name: t.render()
                         for name, t in sorted(step.matcher.bindings.items())}
    if step.reshape is not None:
        doc["reshape"] = _reshape_to_doc(step.reshape)
    if step.deps is not None:
        doc["deps"] = [{"output": _pos(o), "inputs": [_pos(i) for i in ins]}
                       for o, ins in step.deps]
    return doc


def _step_from_doc(doc: dict, sig: Signature) -> RewriteStep:
    matcher = None
    if "matcher" in doc:
        matcher = Substitution({
            name: parse_term(text, sig, canonical=False)
            for name, text in doc["matcher"].items()})
    reshape = _reshape_from_doc(doc["reshape"], sig) if "reshape" in doc else None
    deps = None
    if "deps" in doc:
        deps = tuple((_unpos(e["output"]),
                      tuple(_unpos(i) for i in e["inputs"]))
                     for e in doc["deps"])
    return RewriteStep(doc["kind"], doc["label"], _unpos(doc["pos"]),
                       matcher=matcher, reshape=reshape, deps=deps)


def trace_to_doc(trace: Trace, theory: Theory,
                 model_source: Optional[str] = None,
                 model_name: Optional[str] = None) -> dict:
    doc = {
        "schema": TRACE_SCHEMA,
        "theory_hash": trace.theory_hash,
        "property": trace.property_text,
        "metadata": _jsonable_metadata(trace.metadata),
        "states": [s.render() for s in trace.states],
        "steps": [_step_to_doc(s) for s in trace.steps],
    }
    if model_source is not None:
        doc["model"] = {"name": model_name or theory.name,
                        "source": model_source}
    return doc


def _jsonable_metadata(md: dict) -> dict:
    out = {}
    for k, v in md.items():
        if k == "system_state_indices":
            out[k] = list(v)
        else:
            out[k] = v
    return out


def trace_from_doc(doc: dict, theory: Theory) -> Trace:
    if doc.get("schema") != TRACE_SCHEMA:
        raise InterchangeError(f"unsupported trace schema {doc.get('schema')!r}")
    if doc["theory_hash"] != theory.content_hash():
        raise InterchangeError(
            "trace was recorded against a different theory "
            f"({doc['theory_hash']} != {theory.content_hash()})")
    sig = theory.sig
    states = [parse_term(text, sig, expected_sort=theory.state_sort,
                         canonical=False)
              for text in doc["states"]]
    steps = [_step_from_doc(d, sig) for d in doc["steps"]]
    return Trace(states, steps, doc["theory_hash"],
                 property_text=doc.get("property", ""),
                 metadata=dict(doc.get("metadata", {})))


def theory_from_trace_doc(doc: dict) -> Theory:
    """Rebuild the theory from the embedded model source."""
    model = doc.get("model")
    if not model or not model.get("source"):
        raise InterchangeError("trace document embeds no model source")
    from .navdsl import load_model

    return load_model(model["source"], name=model.get("name", "model"))


def verdict_to_doc(v: Verdict, trace_id: Optional[str] = None) -> dict:
    doc = {
        "schema": VERDICT_SCHEMA,
        "outcome": v.outcome,
        "property": v.property_text,
        "lasso_start": v.lasso_start,
        "states_explored": v.states_explored,
        "product_nodes": v.product_nodes,
        "elapsed": round(v.elapsed, 3),
        "reason": v.reason,
    }
    if trace_id is not None:
        doc["trace_id"] = trace_id
    return doc


def slice_to_doc(sl: SlicedTrace, theory: Theory,
                 trace_id: Optional[str] = None) -> dict:
    from .patterns import render_sliced

    sig = theory.sig
    return {
        "schema": SLICE_SCHEMA,
        "trace_id": trace_id,
        "criterion": {
            "state_index": sl.criterion.state_index,
            "positions": sorted(_pos(p) for p in sl.criterion.positions),
        },
        "per_state": [
            {"rendered": render_sliced(t, sig),
             "kept_positions": sorted(_pos(p) for p in ps)}
            for t, ps in sl.per_state
        ],
        "metrics": {
            "state_symbols": sl.state_symbols,
            "full_state_symbols": sl.full_state_symbols,
            "total_symbols": sl.total_symbols,
            "sliced_symbols": sl.sliced_symbols,
            "ratio": sl.ratio,
            "reduction_percent": round(100.0 * (1.0 - sl.ratio), 1),
        },
    }


def graph_to_doc(theory: Theory) -> dict:
    """The navigation model as nodes (pages) and labeled edges: solid edges
    for links, dashed edges for continuations."""
    pages = getattr(theory, "pages", None)
    if not pages:
        raise InterchangeError("theory carries no page definitions")
    entry = theory.meta.get("entry", "")
    nodes = [{"name": name, "entry": name == entry} for name in pages]
    edges = []
    for name, page in pages.items():
        for cond, target, keys in page.links:
            label = _cond_label(cond)
            if keys:
                label += " / " + ",".join(keys)
            edges.append({"from": name, "to": target, "kind": "link",
                          "label": label})
        for cond, target in page.continuations:
            edges.append({"from": name, "to": target, "kind": "continuation",
                          "label": _cond_label(cond)})
    return {"schema": GRAPH_SCHEMA, "nodes": nodes, "edges": edges}


def _cond_label(cond) -> str:
    if cond.op == "ctrue":
        return "true"
    if cond.op == "ceq" and len(cond.args) == 2:
        a, b = (t.op.strip('"') for t in cond.args)
        return f"{a}={b}"
    return cond.render()


def graph_to_dot(doc: dict) -> str:
    lines = ["digraph navigation {", "  rankdir=LR;"]
    for n in doc["nodes"]:
        peripheries = 2 if n["entry"] else 1
        lines.append(f'  "{n["name"]}" [peripheries={peripheries}];')
    for e in doc["edges"]:
        style = "solid" if e["kind"] == "link" else "dashed"
        lines.append(f'  "{e["from"]}" -> "{e["to"]}" '
                     f'[style={style} label="{e["label"]}"];')
    lines.append("}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# content-addressed trace store
# ---------------------------------------------------------------------------


def canonical_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def doc_id(doc: dict) -> str:
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()[:16]


class TraceStore:
    """Append-only directory of interchange documents keyed by content hash."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    @property
    def index_path(self) -> Path:
        return self.dir / "index.json"

    def _read_index(self) -> dict:
        if self.index_path.exists():
            return json.loads(self.index_path.read_text())
        return {}

    def save(self, doc: dict, verdict: Optional[str] = None) -> str:
        tid = doc_id(doc)
        with self._lock:
            path = self.dir / f"{tid}.json"
            if not path.exists():
                tmp = path.with_suffix(".tmp")
                tmp.write_text(json.dumps(doc, indent=1, sort_keys=True))
                tmp.rename(path)
                index = self._read_index()
                index[tid] = {
                    "theory_hash": doc.get("theory_hash", ""),
                    "property": doc.get("property", ""),
                    "verdict": verdict or "",
                    "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ",
                                                time.gmtime()),
                }
                tmp_i = self.index_path.with_suffix(".tmp")
                tmp_i.write_text(json.dumps(index, indent=1, sort_keys=True))
                tmp_i.rename(self.index_path)
        return tid

    def load(self, tid: str) -> dict:
        path = self.dir / f"{tid}.json"
        if not path.exists():
            raise InterchangeError(f"no stored trace {tid}")
        return json.loads(path.read_text())

    def ids(self) -> list[str]:
        return sorted(self._read_index())

    def entry(self, tid: str) -> dict:
        index = self._read_index()
        if tid not in index:
            raise InterchangeError(f"no stored trace {tid}")
        return index[tid]

    def verify(self, tid: str) -> bool:
        """Store integrity: the stored trace replays bit-exactly against its
        embedded model."""
        doc = self.load(tid)
        theory = theory_from_trace_doc(doc)
        trace = trace_from_doc(doc, theory)
        replay_trace(theory, trace, check=True)
        return True
