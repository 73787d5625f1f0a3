"""Backward trace slicing.

Given a recorded trace and a slicing criterion (a set of relevant symbol
positions in one state), the slicer walks the step descriptors backwards and
computes, for every earlier state, the positions whose symbols influence the
criterion.  Everything else is erased to `*` holes.

The per-step backward rules are conservative: a rule application keeps its
whole left-hand-side skeleton, every occurrence of a nonlinear variable, and
the full bindings read by side conditions; builtin evaluations are refined
through their recorded dependency maps.  The empirical soundness harness
(replay_check) refills the erased holes with random junk and verifies that
replaying the descriptors still reproduces the criterion symbols.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .patterns import (
    FilterPattern,
    ancestors_closed,
    build_slice,
    filter_match,
    parse_filter_pattern,
    render_sliced,
)
from .rewrite import (
    EngineError,
    ReplayDivergence,
    RewriteStep,
    Rule,
    Theory,
    Trace,
    replay_step,
)
from .terms import (
    APP,
    HOLE,
    VAR,
    Position,
    Signature,
    Term,
    TermError,
    subterm_at,
)


class SliceError(TermError):
    pass


@dataclass(frozen=True)
class SlicingCriterion:
    """Relevant symbol positions in one trace state (ancestor-closed)."""

    state_index: int
    positions: frozenset[Position]

    def __post_init__(self):
        object.__setattr__(self, "positions",
                           frozenset(ancestors_closed(set(self.positions))
                                     if self.positions else set()))


@dataclass
class SlicedTrace:
    criterion: SlicingCriterion
    per_state: list[tuple[Term, frozenset[Position]]]
    state_symbols: list[int]
    full_state_symbols: list[int]
    sliced_symbols: int
    total_symbols: int

    @property
    def ratio(self) -> float:
        return self.sliced_symbols / self.total_symbols if self.total_symbols else 0.0

    def rendered(self, sig: Signature) -> list[str]:
        return [render_sliced(t, sig) for t, _ps in self.per_state]


def criterion_from_pattern(trace: Trace, state_index: int,
                           fp, sig: Signature) -> SlicingCriterion:
    """Match a filtering pattern against the indexed state; the matched
    relevant symbols become the criterion (empty when nothing matches)."""
    if not (0 <= state_index < len(trace.states)):
        raise SliceError(f"state index {state_index} out of range")
    if isinstance(fp, str):
        fp = parse_filter_pattern(fp, sig)
    _slice, positions = filter_match(fp, trace.states[state_index], sig)
    return SlicingCriterion(state_index, frozenset(positions))


# ---------------------------------------------------------------------------
# per-step backward propagation
# ---------------------------------------------------------------------------


def _under(p: Position, w: Position) -> bool:
    return p[: len(w)] == w


def _rhs_var_positions(rule: Rule) -> dict[str, list[Position]]:
    out: dict[str, list[Position]] = {}

    def walk(t: Term, p: Position):
        if t.kind == VAR:
            out.setdefault(t.op, []).append(p)
            return
        for i, a in enumerate(t.args, 1):
            walk(a, p + (i,))

    walk(rule.rhs, ())
    return out


def _subtree_positions(t: Term) -> list[Position]:
    return list(t.positions())


def _back_rule(theory: Theory, step: RewriteStep,
               target_positions: set[Position]) -> set[Position]:
    rule = theory.rule(step.label)
    w = step.pos
    sub = step.matcher
    if sub is None:
        raise EngineError(f"rule step {step.label} lacks its matcher")
    rhs_vars = _rhs_var_positions(rule)
    out: set[Position] = set()
    touched = False
    for p in target_positions:
        if not _under(p, w):
            out.add(p)
            continue
        touched = True
        rel = p[len(w):]
        # a symbol inside a right-hand-side variable binding stems from the
        # same offset below every left-hand-side occurrence of that variable;
        # symbols on the rhs skeleton are rule constants
        for x, qs in rhs_vars.items():
            for q in qs:
                if _under(rel, q):
                    off = rel[len(q):]
                    for q2 in rule.var_positions[x]:
                        out.add(w + q2 + off)
    if touched:
        # activation: the data the rule needed in order to fire at all
        for sp in rule.skeleton_positions:
            out.add(w + sp)
        needed = set(rule.read_vars)
        # nonlinear variables are compared for equality during matching, so
        # their full bindings are required on replay
        needed |= {x for x, qs in rule.var_positions.items() if len(qs) > 1}
        for x in needed:
            binding = sub.get(x)
            if binding is None:
                continue
            for q2 in rule.var_positions[x]:
                for r in binding.positions():
                    out.add(w + q2 + r)
    return out


def _back_builtin(source_state: Term, step: RewriteStep,
                  target_positions: set[Position]) -> set[Position]:
    q = step.pos
    call = subterm_at(source_state, q)
    out: set[Position] = set()
    touched = False
    for p in target_positions:
        if not _under(p, q):
            out.add(p)
            continue
        touched = True
        rel = p[len(q):]
        if step.deps is None:
            # no dependency record: every input may matter
            for r in call.positions():
                out.add(q + r)
            continue
        for opath, ipaths in step.deps:
            if not _under(rel, opath):
                continue
            for ip in ipaths:
                inp = subterm_at(call, ip)
                for r in inp.positions():
                    out.add(q + ip + r)
    if touched:
        # the call operator itself must survive so the replay can re-evaluate
        out.add(q)
    return out


def _back_reshape(step: RewriteStep,
                  target_positions: set[Position]) -> set[Position]:
    w = step.pos
    out: set[Position] = set()
    for p in target_positions:
        if not _under(p, w):
            out.add(p)
            continue
        rel = p[len(w):]
        for s in step.reshape.backward_map(rel):
            out.add(w + s)
    return out


def slice_step_backward(theory: Theory, step: RewriteStep, source_state: Term,
                        target_state: Term,
                        target_positions: set[Position]) -> set[Position]:
    """Source positions whose symbols influence the given target symbols."""
    for p in target_positions:
        try:
            subterm_at(target_state, p)
        except TermError as e:
            raise EngineError(f"invalid target position for {step.kind}: {e}")
    if step.kind in ("flat", "unflat"):
        got = _back_reshape(step, set(target_positions))
    elif step.kind == "rule":
        got = _back_rule(theory, step, set(target_positions))
    elif step.kind == "builtin":
        got = _back_builtin(source_state, step, set(target_positions))
    else:
        raise EngineError(f"unknown step kind {step.kind}")
    return ancestors_closed(got) if got else set()


def slice_trace(theory: Theory, trace: Trace,
                criterion: SlicingCriterion) -> SlicedTrace:
    """Backward fold of slice_step_backward from the criterion state down to
    the initial state; states after the criterion state are all holes."""
    n = len(trace.states)
    idx = criterion.state_index
    if not (0 <= idx < n):
        raise SliceError(f"criterion state index {idx} out of range")
    for p in criterion.positions:
        try:
            subterm_at(trace.states[idx], p)
        except TermError as e:
            raise SliceError(f"criterion position invalid: {e}")

    sets: list[set[Position]] = [set() for _ in range(n)]
    sets[idx] = set(criterion.positions)
    for i in range(idx - 1, -1, -1):
        sets[i] = slice_step_backward(theory, trace.steps[i],
                                      trace.states[i], trace.states[i + 1],
                                      sets[i + 1])

    sig = theory.sig
    per_state: list[tuple[Term, frozenset[Position]]] = []
    state_symbols: list[int] = []
    full_state_symbols: list[int] = []
    sliced_total = 0
    total = 0
    for i, st in enumerate(trace.states):
        sl = build_slice(sig, st, sets[i])
        per_state.append((sl, frozenset(sets[i])))
        k = sl.symbol_count()
        state_symbols.append(k)
        full_state_symbols.append(st.symbol_count())
        sliced_total += k
        total += st.symbol_count()
    return SlicedTrace(criterion, per_state, state_symbols, full_state_symbols,
                       sliced_total, total)


# ---------------------------------------------------------------------------
# empirical soundness: randomized hole refills
# ---------------------------------------------------------------------------


@dataclass
class ReplayReport:
    samples: int
    agreements: int
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.agreements == self.samples and not self.failures


class _Refiller:
    """Generates fresh well-sorted junk terms; literal payloads carry an
    `rnd-` marker that cannot collide with any model data."""

    def __init__(self, sig: Signature, rng: random.Random):
        self.sig = sig
        self.rng = rng
        self.counter = 0
        self._consts: dict[str, list[str]] = {}
        for name, decls in sorted(sig.ops.items()):
            for d in decls:
                if d.arity == 0 and d.ctor:
                    self._consts.setdefault(d.result_sort, []).append(name)
        self._lit = {fam.sort: fam.name for fam in sig.literals}

    def fresh(self, sort: str) -> Term:
        self.counter += 1
        tag = f"{self.rng.randrange(1 << 20)}x{self.counter}"
        fam = self._lit.get(sort)
        if fam == "string":
            return self.sig.app(f'"rnd-{tag}"')
        if fam == "qid":
            return self.sig.app(f"'rnd-{tag}")
        if fam == "nat":
            return self.sig.app(str((1 << 20) + self.counter))
        consts = self._consts.get(sort)
        if consts:
            return self.sig.app(self.rng.choice(consts))
        raise SliceError(f"cannot generate a junk term of sort {sort}")

    def refill(self, t: Term) -> Term:
        if t.kind == HOLE:
            return self.fresh(t.sort)
        if not t.args:
            return t
        args = tuple(self.refill(a) for a in t.args)
        return self.sig._mk(t.kind, t.op, args, t.sort)


def _symbols_agree(a: Term, b: Term, positions) -> Optional[Position]:
    """First criterion position whose symbols differ, or None."""
    for p in sorted(positions):
        try:
            x = subterm_at(a, p)
            y = subterm_at(b, p)
        except TermError:
            return p
        if x.kind != y.kind or x.op != y.op or len(x.args) != len(y.args):
            return p
    return None


def replay_check(theory: Theory, trace: Trace, sliced: SlicedTrace,
                 samples: int = 100, seed: int = 0) -> ReplayReport:
    """Refill the sliced initial state's holes with random junk and replay
    the recorded descriptors; the criterion symbols of the reached state must
    match the original trace."""
    rng = random.Random(seed)
    idx = sliced.criterion.state_index
    start_slice = sliced.per_state[0][0]
    original = trace.states[idx]
    report = ReplayReport(samples=samples, agreements=0)
    for k in range(samples):
        filler = _Refiller(theory.sig, rng)
        cur = filler.refill(start_slice)
        try:
            for i in range(idx):
                cur = replay_step(theory, cur, trace.steps[i], i)
        except ReplayDivergence as e:
            report.failures.append((k, f"step {e.step_index}: {e}"))
            continue
        bad = _symbols_agree(cur, original, sliced.criterion.positions)
        if bad is None:
            report.agreements += 1
        else:
            report.failures.append((k, f"criterion symbol differs at "
                                       f"{'.'.join(map(str, bad)) or 'root'}"))
    return report
