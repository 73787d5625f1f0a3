"""Command-line driver.

Exit codes: 0 property fulfilled / operation succeeded, 1 property refuted
(or replay verification failed), 2 search budget exhausted, 3 input errors
(model or formula parse failures, bad arguments).
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

from .interchange import (
    InterchangeError,
    TraceStore,
    graph_to_doc,
    graph_to_dot,
    slice_to_doc,
    theory_from_trace_doc,
    trace_from_doc,
    trace_to_doc,
    verdict_to_doc,
)
from .ltlr import FormulaError, SearchBudget, check, parse_formula
from .navdsl import NavParseError, load_model
from .slicer import criterion_from_pattern, replay_check, slice_trace
from .terms import TermError

EXIT_OK = 0
EXIT_REFUTED = 1
EXIT_BUDGET = 2
EXIT_USAGE = 3


def _line_col(text: str, offset: int) -> tuple[int, int]:
    head = text[:offset]
    line = head.count("\n") + 1
    col = offset - (head.rfind("\n") + 1) + 1
    return line, col


def _diagnose(source: str, message: str) -> str:
    m = re.search(r"offset (\d+)", message)
    if m:
        line, col = _line_col(source, int(m.group(1)))
        return f"{message} (line {line}, column {col})"
    return message


def _load_spec(path: str):
    source = Path(path).read_text()
    try:
        theory = load_model(source, name=Path(path).stem)
    except (NavParseError, TermError) as e:
        raise SystemExit2(f"cannot load {path}: {_diagnose(source, str(e))}")
    return theory, source


class SystemExit2(Exception):
    """Input error carrying a diagnostic; mapped to exit code 3."""


def _budget(args) -> SearchBudget:
    return SearchBudget(
        max_states=args.budget_states,
        max_depth=args.budget_depth,
        time_limit=args.budget_time,
    )


def _emit(args, text_lines: list[str], doc: dict):
    if args.format == "json":
        print(json.dumps(doc, indent=1, sort_keys=True))
    else:
        for line in text_lines:
            print(line)


def cmd_check(args) -> int:
    theory, source = _load_spec(args.spec)
    try:
        known = {"curPage"} | set(theory.predicates)
        formula = parse_formula(args.prop, known_predicates=known)
    except FormulaError as e:
        raise SystemExit2(f"bad property: {e}")
    verdict = check(theory, formula, budget=_budget(args))
    trace_id = None
    trace_path = None
    if verdict.refuted:
        store = TraceStore(args.store)
        doc = trace_to_doc(verdict.counterexample, theory,
                           model_source=source, model_name=theory.name)
        trace_id = store.save(doc, verdict=verdict.outcome)
        trace_path = str(store.dir / f"{trace_id}.json")
    vdoc = verdict_to_doc(verdict, trace_id=trace_id)
    if trace_path:
        vdoc["trace_file"] = trace_path
    lines = [f"property: {verdict.property_text}",
             f"verdict: {verdict.outcome}",
             f"states explored: {verdict.states_explored} "
             f"(product nodes: {verdict.product_nodes})",
             f"elapsed: {verdict.elapsed:.2f}s"]
    if verdict.reason:
        lines.append(f"reason: {verdict.reason}")
    if trace_path:
        lines.append(f"counterexample: {trace_path} "
                     f"({len(verdict.counterexample.states)} states, "
                     f"lasso at {verdict.lasso_start})")
    _emit(args, lines, vdoc)
    if verdict.fulfilled:
        return EXIT_OK
    if verdict.refuted:
        return EXIT_REFUTED
    return EXIT_BUDGET


def _load_trace(path: str):
    try:
        doc = json.loads(Path(path).read_text())
        theory = theory_from_trace_doc(doc)
        trace = trace_from_doc(doc, theory)
    except (OSError, json.JSONDecodeError, InterchangeError, TermError) as e:
        raise SystemExit2(f"cannot load trace {path}: {e}")
    return doc, theory, trace


def _state_index(selector: str, trace) -> int:
    if selector == "last":
        return len(trace.states) - 1
    try:
        idx = int(selector)
    except ValueError:
        raise SystemExit2(f"bad state selector {selector!r}")
    if not (0 <= idx < len(trace.states)):
        raise SystemExit2(f"state index {idx} out of range "
                          f"(0..{len(trace.states) - 1})")
    return idx


def _slice_for(args, doc, theory, trace):
    idx = _state_index(args.state, trace)
    try:
        crit = criterion_from_pattern(trace, idx, args.pattern, theory.sig)
    except TermError as e:
        raise SystemExit2(f"bad pattern: {e}")
    return idx, crit, slice_trace(theory, trace, crit)


def cmd_slice(args) -> int:
    doc, theory, trace = _load_trace(args.trace)
    _idx, _crit, sl = _slice_for(args, doc, theory, trace)
    sdoc = slice_to_doc(sl, theory)
    if args.out:
        Path(args.out).write_text(json.dumps(sdoc, indent=1, sort_keys=True))
    m = sdoc["metrics"]
    lines = [f"|T|  = {m['total_symbols']}",
             f"|T.| = {m['sliced_symbols']}",
             f"ratio = {m['ratio']:.3f}",
             f"reduction = {m['reduction_percent']}%"]
    if args.out:
        lines.append(f"slice written to {args.out}")
    _emit(args, lines, sdoc)
    return EXIT_OK


def cmd_render_graph(args) -> int:
    theory, _source = _load_spec(args.spec)
    doc = graph_to_doc(theory)
    _emit(args, [graph_to_dot(doc)], doc)
    return EXIT_OK


def cmd_replay_verify(args) -> int:
    doc, theory, trace = _load_trace(args.trace)
    _idx, _crit, sl = _slice_for(args, doc, theory, trace)
    report = replay_check(theory, trace, sl, samples=args.samples,
                          seed=args.seed)
    rdoc = {"samples": report.samples, "agreements": report.agreements,
            "failures": [{"sample": k, "message": msg}
                         for k, msg in report.failures[:10]],
            "ok": report.ok}
    lines = [f"replayed {report.samples} randomized refills: "
             f"{report.agreements} agreed"]
    for k, msg in report.failures[:5]:
        lines.append(f"  sample {k}: {msg}")
    _emit(args, lines, rdoc)
    return EXIT_OK if report.ok else EXIT_REFUTED


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.store)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="webnav",
        description="Model checking and trace slicing for Web navigation models")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_budget(p):
        p.add_argument("--budget-states", type=int, default=1_000_000)
        p.add_argument("--budget-depth", type=int, default=500_000)
        p.add_argument("--budget-time", type=float, default=None)

    def add_format(p):
        p.add_argument("--format", choices=("json", "text"), default="text")

    p = sub.add_parser("check", help="model-check a temporal property")
    p.add_argument("spec", help="navigation model file")
    p.add_argument("--prop", required=True, help="temporal property")
    p.add_argument("--store", default="traces", help="trace store directory")
    add_budget(p)
    add_format(p)
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("slice", help="backward-slice a stored trace")
    p.add_argument("trace", help="trace document file")
    p.add_argument("--state", default="last", help="state index or 'last'")
    p.add_argument("--pattern", required=True, help="filtering pattern")
    p.add_argument("--out", default=None, help="write the slice document here")
    add_format(p)
    p.set_defaults(fn=cmd_slice)

    p = sub.add_parser("render-graph", help="emit the navigation graph")
    p.add_argument("spec")
    add_format(p)
    p.set_defaults(fn=cmd_render_graph)

    p = sub.add_parser("replay-verify",
                       help="randomized replay check of a slice")
    p.add_argument("trace")
    p.add_argument("--state", default="last")
    p.add_argument("--pattern", required=True)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    add_format(p)
    p.set_defaults(fn=cmd_replay_verify)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--store", default="traces")
    p.set_defaults(fn=cmd_serve)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit2 as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
