"""Labeled conditional rewrite rules, one-step successors and trace recording.

A recorded rewrite step is a *positional* transformation: applying the step
descriptor to its source state reproduces the target state exactly, and the
same descriptors can be replayed against a state whose irrelevant parts were
altered (the empirical soundness harness for the slicer relies on this).

One rule application expands into up to four recorded step kinds:

* ``unflat`` - the redex is rebuilt in the (non-canonical) shape of the rule's
  left-hand side, as dictated by the matcher;
* ``rule``   - the redex is replaced by the instantiated right-hand side,
  which may still contain unevaluated builtin-call nodes;
* ``builtin``- one builtin-call node is evaluated, with a dependency record
  mapping its outputs to the inputs they were computed from;
* ``flat``   - the state is re-canonicalized.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Optional

from .terms import (
    APP,
    VAR,
    Match,
    Position,
    Reshape,
    Signature,
    Substitution,
    Term,
    TermError,
    _args_under,
    flatten,
    flatten_with_map,
    instantiate,
    match_terms,
    pos_str,
    replace_at_raw,
    subterm_at,
)


class EngineError(TermError):
    """Internal consistency violation (an engine bug, not a user error)."""


class ReplayDivergence(TermError):
    def __init__(self, msg, step_index: int = -1):
        super().__init__(msg)
        self.step_index = step_index


class BuiltinFailure(TermError):
    pass


# DependencyRecord: for builtin outputs, which inputs they stem from.
# Output positions are relative to the result root, input positions relative
# to the call node ((k, ...) descends into argument k).  Outputs not covered
# by any entry are rule-constant.
DepRecord = tuple[tuple[Position, tuple[Position, ...]], ...]

# A builtin takes the theory and the (ground) argument terms and returns the
# result term plus an optional dependency record.
BuiltinFn = Callable[["Theory", tuple[Term, ...]], tuple[Term, Optional[DepRecord]]]
TestFn = Callable[["Theory", tuple[Term, ...]], bool]


@dataclass(frozen=True)
class Condition:
    """A boolean side condition `test(args...)` over left-hand-side variables.

    An untracked condition is a search-space pruning device only: it gates
    rule application during exploration but is not re-checked on replay and
    contributes no read dependencies to slicing.
    """

    test: str
    args: tuple[Term, ...]
    tracked: bool = True


BoolTest = Condition


class Rule:
    def __init__(self, label: str, lhs: Term, rhs: Term,
                 conditions: tuple[Condition, ...] = (),
                 top_only: bool = True,
                 guard: Optional[Callable[[Term], bool]] = None):
        if not label:
            raise EngineError("rule label must be nonempty")
        self.label = label
        self.lhs = lhs
        self.rhs = rhs
        self.conditions = tuple(conditions)
        self.top_only = top_only
        self.guard = guard
        self.var_positions: dict[str, list[Position]] = {}
        self.skeleton_positions: list[Position] = []
        self._index_lhs(lhs, ())
        lhs_vars = set(self.var_positions)
        for v in rhs.variables():
            if v not in lhs_vars:
                raise EngineError(f"rule {label}: rhs variable {v} unbound")
        self.read_vars: set[str] = set()
        for c in self.conditions:
            for a in c.args:
                bad = a.variables() - lhs_vars
                if bad:
                    raise EngineError(f"rule {label}: condition variables {bad} unbound")
                if c.tracked:
                    self.read_vars |= a.variables()

    def _index_lhs(self, t: Term, p: Position):
        if t.kind == VAR:
            self.var_positions.setdefault(t.op, []).append(p)
            return
        self.skeleton_positions.append(p)
        for i, a in enumerate(t.args, 1):
            self._index_lhs(a, p + (i,))


class Theory:
    """A signature plus labeled rules, builtins and boolean tests."""

    def __init__(self, sig: Signature, state_sort: str, name: str = "theory"):
        self.sig = sig
        self.state_sort = state_sort
        self.name = name
        self.rules: list[Rule] = []
        self.builtins: dict[str, BuiltinFn] = {}
        self.tests: dict[str, TestFn] = {}
        self._by_label: dict[str, Rule] = {}
        self.predicates: dict[str, object] = {}
        self.meta: dict = {}
        # builtins are pure and call nodes are interned, so results can be
        # cached per call-term identity (keep a ref to the key term: interning
        # keeps it alive anyway, and the id stays valid)
        self._builtin_cache: dict[int, tuple[Term, Term, Optional[DepRecord]]] = {}

    def add_rule(self, rule: Rule) -> Rule:
        # canonicalize both sides: matching and instantiation work on the
        # flattened representation
        rule.lhs = flatten(self.sig, rule.lhs)
        rule.rhs = flatten(self.sig, rule.rhs)
        rule.var_positions = {}
        rule.skeleton_positions = []
        rule._index_lhs(rule.lhs, ())
        if rule.label in self._by_label:
            raise EngineError(f"duplicate rule label {rule.label}")
        self._by_label[rule.label] = rule
        self.rules.append(rule)
        return rule

    def rule(self, label: str) -> Rule:
        r = self._by_label.get(label)
        if r is None:
            raise EngineError(f"unknown rule label {label}")
        return r

    def add_builtin(self, name: str, fn: BuiltinFn):
        self.builtins[name] = fn

    def add_test(self, name: str, fn: TestFn):
        self.tests[name] = fn

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for name, decls in sorted(self.sig.ops.items()):
            for d in decls:
                h.update(repr((d.name, d.arg_sorts, d.result_sort, d.assoc,
                               d.comm, d.identity)).encode())
        for r in self.rules:
            h.update(r.label.encode())
            h.update(r.lhs.render().encode())
            h.update(r.rhs.render().encode())
            for c in r.conditions:
                h.update(c.test.encode() + (b"!" if not c.tracked else b""))
                for a in c.args:
                    h.update(a.render().encode())
        for k, v in sorted(self.meta.items()):
            h.update(repr((k, v)).encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class RewriteStep:
    """One recorded trace step; `applying` it to the source state yields the
    target state exactly (see replay_step)."""

    kind: str  # "rule" | "flat" | "unflat" | "builtin"
    label: str
    pos: Position
    matcher: Optional[Substitution] = None
    reshape: Optional[Reshape] = None
    deps: Optional[DepRecord] = None


@dataclass
class Trace:
    states: list[Term]
    steps: list[RewriteStep]
    theory_hash: str = ""
    property_text: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.steps) != max(0, len(self.states) - 1):
            raise EngineError("trace shape: len(steps) must be len(states) - 1")

    def symbol_count(self) -> int:
        return sum(s.symbol_count() for s in self.states)


# ---------------------------------------------------------------------------
# matching rules against states
# ---------------------------------------------------------------------------


def _condition_holds(theory: Theory, rule: Rule, sub: Substitution,
                     tracked_only: bool = False) -> bool:
    for c in rule.conditions:
        if tracked_only and not c.tracked:
            continue
        fn = theory.tests.get(c.test)
        if fn is None:
            raise EngineError(f"unregistered test builtin {c.test}")
        args = tuple(flatten(theory.sig, instantiate(theory.sig, a, sub))
                     for a in c.args)
        try:
            if not fn(theory, args):
                return False
        except BuiltinFailure:
            return False
    return True


def applicable_steps(state: Term, theory: Theory
                     ) -> list[tuple[Rule, Position, Match]]:
    """The complete set of (rule, redex position, matcher) triples, in
    deterministic order: rule declaration order, then position order, then
    matcher canonical order."""
    out = []
    for rule in theory.rules:
        if rule.guard is not None and not rule.guard(state):
            continue
        positions = [()] if rule.top_only else sorted(state.positions())
        for pos in positions:
            redex = subterm_at(state, pos)
            if redex.sort != rule.lhs.sort:
                continue
            for m in match_terms(theory.sig, rule.lhs, redex):
                if _condition_holds(theory, rule, m.sub):
                    out.append((rule, pos, m))
    return out


# ---------------------------------------------------------------------------
# applying a step, with full trace expansion
# ---------------------------------------------------------------------------


def _unflat_reshape(sig: Signature, rule: Rule, m: Match, redex: Term) -> Reshape:
    """Reshape turning the canonical redex into the literal sigma(lhs) view."""
    pairs: list[tuple[list[Position], Position]] = []
    node_src: list[tuple[Position, Position]] = []

    def build(p: Term, s: Term, ppos: Position, spos: Position,
              dst: Position) -> Term:
        if p.kind == VAR:
            pairs.append(([spos], dst))
            return sig.hole(p.sort)
        decl = sig.decl_of(p)
        if decl is not None and decl.assoc and len(p.args) >= 2:
            subj_args = _args_under(sig, decl, s)

            def argpos(j: int) -> Position:
                if s.kind == APP and s.op == p.op and len(s.args) >= 2:
                    return spos + (j + 1,)
                return spos

            groups = m.groups.get(ppos)
            if groups is None:
                raise EngineError(f"missing matcher groups at {pos_str(ppos)}")
            node_src.append((dst, spos))
            skel_args = []
            for i, sl in enumerate(p.args):
                idxs = groups[i]
                if sl.kind == VAR:
                    if not idxs:
                        ident = sig.identity_term(decl)
                        assert ident is not None
                        skel_args.append(ident)
                    else:
                        pairs.append(([argpos(j) for j in idxs], dst + (i + 1,)))
                        skel_args.append(sig.hole(sl.sort))
                else:
                    j = idxs[0]
                    skel_args.append(
                        build(sl, subj_args[j], ppos + (i + 1,), argpos(j),
                              dst + (i + 1,)))
            return sig._mk(APP, p.op, tuple(skel_args), p.sort)
        # free operator or constant: structure coincides with the subject
        if not p.args:
            node_src.append((dst, spos))
            return p
        node_src.append((dst, spos))
        args = tuple(
            build(a, s.args[i - 1], ppos + (i,), spos + (i,), dst + (i,))
            for i, a in enumerate(p.args, 1)
        )
        return sig._mk(APP, p.op, args, p.sort)

    skel = build(rule.lhs, redex, (), (), ())
    return Reshape(skel, tuple((tuple(s), d) for s, d in pairs), tuple(node_src))


def _find_builtin_call(theory: Theory, t: Term, p: Position
                       ) -> Optional[Position]:
    """Leftmost-innermost builtin call node, or None."""
    for i, a in enumerate(t.args, 1):
        q = _find_builtin_call(theory, a, p + (i,))
        if q is not None:
            return q
    if t.kind == APP and t.op in theory.builtins:
        return p
    return None


def _eval_call(theory: Theory, call: Term) -> tuple[Term, Optional[DepRecord]]:
    hit = theory._builtin_cache.get(id(call))
    if hit is not None:
        return hit[1], hit[2]
    fn = theory.builtins[call.op]
    result, deps = fn(theory, call.args)
    theory._builtin_cache[id(call)] = (call, result, deps)
    return result, deps


def apply_step(state: Term, rule: Rule, pos: Position, m: Match,
               theory: Theory) -> tuple[Term, list[Term], list[RewriteStep]]:
    """Apply one matched rule, materializing the expanded step list.

    Returns (target, intermediate_states, steps) where intermediate_states
    lists every state after each step (the last one is the target).
    """
    sig = theory.sig
    states: list[Term] = []
    steps: list[RewriteStep] = []
    cur = state

    redex = subterm_at(state, pos)
    lhs_inst = instantiate(sig, rule.lhs, m.sub)
    if lhs_inst is not redex:
        reshape = _unflat_reshape(sig, rule, m, redex)
        rebuilt = reshape.apply(sig, redex)
        if rebuilt is not lhs_inst:
            raise EngineError(
                f"unflat reshape mismatch for rule {rule.label}: "
                f"{rebuilt.render()} != {lhs_inst.render()}"
            )
        cur = replace_at_raw(sig, cur, pos, lhs_inst)
        steps.append(RewriteStep("unflat", "unflat", pos, reshape=reshape))
        states.append(cur)

    rhs_inst = instantiate(sig, rule.rhs, m.sub)
    cur = replace_at_raw(sig, cur, pos, rhs_inst)
    steps.append(RewriteStep("rule", rule.label, pos, matcher=m.sub))
    states.append(cur)

    while True:
        q = _find_builtin_call(theory, cur, ())
        if q is None:
            break
        call = subterm_at(cur, q)
        result, deps = _eval_call(theory, call)
        cur = replace_at_raw(sig, cur, q, result)
        steps.append(RewriteStep("builtin", call.op, q, deps=deps))
        states.append(cur)

    canon, reshape = flatten_with_map(sig, cur)
    if canon is not cur:
        cur = canon
        steps.append(RewriteStep("flat", "flat", (), reshape=reshape))
        states.append(cur)

    return cur, states, steps


def apply_fast(state: Term, rule: Rule, pos: Position, m: Match,
               theory: Theory, memo: Optional[dict] = None) -> Term:
    """Target state only, without materializing intermediate steps."""
    sig = theory.sig
    if memo is None:
        memo = {}

    # builtin calls can only stem from the rhs skeleton: matcher bindings are
    # fragments of an already fully evaluated state, so instantiation and
    # evaluation combine into one walk that never descends into bindings
    def build(t: Term) -> Term:
        if t.kind == VAR:
            b = m.sub.get(t.op)
            if b is None:
                raise EngineError(f"rule {rule.label}: unbound rhs variable {t.op}")
            return b
        node = t if not t.args else sig._mk(
            APP, t.op, tuple(build(a) for a in t.args), t.sort)
        if node.op in theory.builtins:
            r = memo.get(id(node))
            if r is None:
                r, _ = _eval_call(theory, node)
                memo[id(node)] = r
            return r
        return node

    rhs_inst = build(rule.rhs)
    return flatten(sig, replace_at_raw(sig, state, pos, rhs_inst))


def successors(state: Term, theory: Theory
               ) -> list[tuple[Term, str, tuple]]:
    """Deterministic successor list: (target, rule label, (rule, pos, match))."""
    out = []
    memo: dict = {}
    for rule, pos, m in applicable_steps(state, theory):
        target = apply_fast(state, rule, pos, m, theory, memo)
        out.append((target, rule.label, (rule, pos, m)))
    return out


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------


def _extract_matcher(sig: Signature, rule: Rule, redex: Term,
                     step_index: int) -> Substitution:
    binds: dict[str, Term] = {}
    for name, positions in rule.var_positions.items():
        vals = []
        for p in positions:
            try:
                vals.append(subterm_at(redex, p))
            except TermError as e:
                raise ReplayDivergence(
                    f"lhs variable {name} unreachable: {e}", step_index)
        if any(v is not vals[0] for v in vals[1:]):
            raise ReplayDivergence(
                f"nonlinear variable {name} bound inconsistently", step_index)
        binds[name] = vals[0]
    for p in rule.skeleton_positions:
        want = subterm_at(rule.lhs, p)
        try:
            got = subterm_at(redex, p)
        except TermError as e:
            raise ReplayDivergence(f"lhs skeleton unreachable: {e}", step_index)
        if got.kind != APP or got.op != want.op or len(got.args) != len(want.args):
            raise ReplayDivergence(
                f"lhs skeleton mismatch at {pos_str(p)}: expected {want.op}, "
                f"got {got.render()[:60]}", step_index)
    return Substitution(binds)


def replay_step(theory: Theory, state: Term, step: RewriteStep,
                step_index: int = -1) -> Term:
    sig = theory.sig
    if step.kind in ("flat", "unflat"):
        base = subterm_at(state, step.pos)
        try:
            new = step.reshape.apply(sig, base)
        except TermError as e:
            raise ReplayDivergence(f"reshape failed: {e}", step_index)
        return replace_at_raw(sig, state, step.pos, new)
    if step.kind == "rule":
        rule = theory.rule(step.label)
        redex = subterm_at(state, step.pos)
        sub = _extract_matcher(sig, rule, redex, step_index)
        if not _condition_holds(theory, rule, sub, tracked_only=True):
            raise ReplayDivergence(
                f"condition of rule {step.label} failed on replay", step_index)
        rhs_inst = instantiate(sig, rule.rhs, sub)
        return replace_at_raw(sig, state, step.pos, rhs_inst)
    if step.kind == "builtin":
        call = subterm_at(state, step.pos)
        if call.kind != APP or call.op != step.label:
            raise ReplayDivergence(
                f"expected builtin call {step.label} at {pos_str(step.pos)}",
                step_index)
        try:
            result, _deps = _eval_call(theory, call)
        except TermError as e:
            raise ReplayDivergence(f"builtin {step.label} failed: {e}", step_index)
        return replace_at_raw(sig, state, step.pos, result)
    raise EngineError(f"unknown step kind {step.kind}")


def replay_trace(theory: Theory, trace: Trace, check: bool = True) -> list[Term]:
    """Replay every step descriptor; with check=True, assert bit-exactness."""
    out = [trace.states[0]]
    cur = trace.states[0]
    for i, step in enumerate(trace.steps):
        cur = replay_step(theory, cur, step, i)
        if check and cur is not trace.states[i + 1]:
            raise ReplayDivergence(
                f"replay of step {i} ({step.kind} {step.label}) diverged",
                i)
        out.append(cur)
    return out
