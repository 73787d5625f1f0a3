"""Linear temporal logic over states and rule labels, with model checking.

Formulas combine state-predicate atoms (evaluated on single states), rule
label atoms `@Label` (true on a transition fired by that rule), the boolean
connectives and the temporal operators `[]` (always), `<>` (eventually), `O`
(next) and `U` (until).

Checking negates the property, translates it to a Buchi automaton with the
classic tableau construction, and runs a nested depth-first emptiness search
on the product with the reachable state graph.  Refutations come back as a
finite trace: a stem plus one unrolling of the accepting cycle, with every
rewrite step fully expanded so the slicer can walk it backwards.
"""

from __future__ import annotations

import re
import time as _time
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .rewrite import Theory, Trace, apply_step, successors
from .terms import Term, TermError


class FormulaError(TermError):
    pass


class CheckError(TermError):
    pass


# ---------------------------------------------------------------------------
# formulas
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Formula:
    def render(self) -> str:
        raise NotImplementedError

    def __str__(self):
        return self.render()


@dataclass(frozen=True)
class TrueF(Formula):
    def render(self):
        return "true"


@dataclass(frozen=True)
class FalseF(Formula):
    def render(self):
        return "false"


@dataclass(frozen=True)
class Atom(Formula):
    name: str
    args: tuple[str, ...] = ()
    on_label: bool = False  # rule-label atom, written @Name

    def render(self):
        if self.on_label:
            return f"@{self.name}"
        if not self.args:
            return self.name
        return f"{self.name}({', '.join(self.args)})"

    def key(self) -> str:
        return self.render()


@dataclass(frozen=True)
class Not(Formula):
    sub: Formula

    def render(self):
        return f"~ {_paren(self.sub)}"


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula

    def render(self):
        return f"{_paren(self.left)} /\\ {_paren(self.right)}"


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula

    def render(self):
        return f"{_paren(self.left)} \\/ {_paren(self.right)}"


@dataclass(frozen=True)
class Implies(Formula):
    left: Formula
    right: Formula

    def render(self):
        return f"{_paren(self.left)} -> {_paren(self.right)}"


@dataclass(frozen=True)
class Next(Formula):
    sub: Formula

    def render(self):
        return f"O {_paren(self.sub)}"


@dataclass(frozen=True)
class Always(Formula):
    sub: Formula

    def render(self):
        return f"[] {_paren(self.sub)}"


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula

    def render(self):
        return f"{_paren(self.left)} U {_paren(self.right)}"


@dataclass(frozen=True)
class Release(Formula):
    """Dual of until; produced by negation normal form, not by the parser."""

    left: Formula
    right: Formula

    def render(self):
        return f"{_paren(self.left)} R {_paren(self.right)}"


def _paren(f: Formula) -> str:
    if isinstance(f, (Atom, TrueF, FalseF, Not, Next, Always)):
        return f.render()
    return f"({f.render()})"


def atoms_of(f: Formula) -> set[Atom]:
    if isinstance(f, Atom):
        return {f}
    out: set[Atom] = set()
    for name in ("sub", "left", "right"):
        sub = getattr(f, name, None)
        if sub is not None:
            out |= atoms_of(sub)
    return out


# -- parsing ---------------------------------------------------------------

_F_TOKEN = re.compile(
    r"""\s*(?:
        (?P<op>\[\]|<>|/\\|\\/|->|[OU~(),])
      | (?P<label>@[A-Za-z][A-Za-z0-9_\-]*)
      | (?P<name>[A-Za-z][A-Za-z0-9_\-]*)
    )""",
    re.VERBOSE,
)


def _f_tokens(text: str) -> list[str]:
    out, pos = [], 0
    while pos < len(text):
        m = _F_TOKEN.match(text, pos)
        if m is None:
            if text[pos:].strip():
                raise FormulaError(f"bad formula character {text[pos]!r}")
            break
        pos = m.end()
        out.append(m.group(m.lastgroup))
    return out


class _FParser:
    def __init__(self, text: str):
        self.toks = _f_tokens(text)
        self.i = 0

    def peek(self) -> Optional[str]:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def next(self) -> str:
        t = self.peek()
        if t is None:
            raise FormulaError("unexpected end of formula")
        self.i += 1
        return t

    def expect(self, tok: str):
        t = self.next()
        if t != tok:
            raise FormulaError(f"expected {tok!r}, got {t!r}")

    # precedence: unary > U > /\ > \/ > ->
    def implies(self) -> Formula:
        left = self.disj()
        if self.peek() == "->":
            self.next()
            return Implies(left, self.implies())
        return left

    def disj(self) -> Formula:
        f = self.conj()
        while self.peek() == "\\/":
            self.next()
            f = Or(f, self.conj())
        return f

    def conj(self) -> Formula:
        f = self.until()
        while self.peek() == "/\\":
            self.next()
            f = And(f, self.until())
        return f

    def until(self) -> Formula:
        f = self.unary()
        if self.peek() == "U":
            self.next()
            return Until(f, self.until())
        return f

    def unary(self) -> Formula:
        t = self.peek()
        if t == "~":
            self.next()
            return Not(self.unary())
        if t == "[]":
            self.next()
            return Always(self.unary())
        if t == "<>":
            self.next()
            # eventually is an abbreviation: <> p == true U p
            return Until(TrueF(), self.unary())
        if t == "O":
            self.next()
            return Next(self.unary())
        return self.primary()

    def primary(self) -> Formula:
        t = self.next()
        if t == "(":
            f = self.implies()
            self.expect(")")
            return f
        if t == "true":
            return TrueF()
        if t == "false":
            return FalseF()
        if t.startswith("@"):
            return Atom(t[1:], (), on_label=True)
        if not t[0].isalpha():
            raise FormulaError(f"unexpected token {t!r}")
        if self.peek() == "(":
            self.next()
            args = []
            if self.peek() != ")":
                while True:
                    a = self.next()
                    if not a[0].isalpha():
                        raise FormulaError(f"bad predicate argument {a!r}")
                    args.append(a)
                    if self.peek() == ",":
                        self.next()
                        continue
                    break
            self.expect(")")
            return Atom(t, tuple(args))
        return Atom(t)


def parse_formula(text: str,
                  known_predicates: Optional[Iterable[str]] = None) -> Formula:
    p = _FParser(text)
    f = p.implies()
    if p.peek() is not None:
        raise FormulaError(f"trailing input after formula: {p.peek()!r}")
    if known_predicates is not None:
        known = set(known_predicates)
        for a in atoms_of(f):
            if not a.on_label and a.name not in known:
                raise FormulaError(f"unknown predicate {a.name}")
    return f


# -- negation normal form --------------------------------------------------


def nnf(f: Formula) -> Formula:
    """Core form: atoms, negated atoms, true/false, and/or, next, until,
    release.  [] p becomes false R p, implications expand."""
    if isinstance(f, (TrueF, FalseF, Atom)):
        return f
    if isinstance(f, And):
        return And(nnf(f.left), nnf(f.right))
    if isinstance(f, Or):
        return Or(nnf(f.left), nnf(f.right))
    if isinstance(f, Implies):
        return Or(nnf(Not(f.left)), nnf(f.right))
    if isinstance(f, Next):
        return Next(nnf(f.sub))
    if isinstance(f, Always):
        return Release(FalseF(), nnf(f.sub))
    if isinstance(f, Until):
        return Until(nnf(f.left), nnf(f.right))
    if isinstance(f, Release):
        return Release(nnf(f.left), nnf(f.right))
    if isinstance(f, Not):
        g = f.sub
        if isinstance(g, TrueF):
            return FalseF()
        if isinstance(g, FalseF):
            return TrueF()
        if isinstance(g, Atom):
            return Not(g)
        if isinstance(g, Not):
            return nnf(g.sub)
        if isinstance(g, And):
            return Or(nnf(Not(g.left)), nnf(Not(g.right)))
        if isinstance(g, Or):
            return And(nnf(Not(g.left)), nnf(Not(g.right)))
        if isinstance(g, Implies):
            return And(nnf(g.left), nnf(Not(g.right)))
        if isinstance(g, Next):
            return Next(nnf(Not(g.sub)))
        if isinstance(g, Always):
            return Until(TrueF(), nnf(Not(g.sub)))
        if isinstance(g, Until):
            return Release(nnf(Not(g.left)), nnf(Not(g.right)))
        if isinstance(g, Release):
            return Until(nnf(Not(g.left)), nnf(Not(g.right)))
    raise FormulaError(f"cannot normalize {f!r}")


# ---------------------------------------------------------------------------
# tableau translation to a Buchi automaton
# ---------------------------------------------------------------------------


@dataclass
class Buchi:
    """State-labeled Buchi automaton.

    A run q0 q1 ... over a word v0 v1 ... must satisfy, at every i, the
    positive and negative atom obligations of q_i, and visit accepting states
    infinitely often.
    """

    n: int
    initial: list[int]
    labels: list[tuple[frozenset[str], frozenset[str]]]  # (required, forbidden)
    trans: list[list[int]]
    accepting: frozenset[int]

    def satisfied(self, q: int, valuation: frozenset[str]) -> bool:
        pos, neg = self.labels[q]
        return pos <= valuation and not (neg & valuation)

    def violation_sinks(self) -> set[int]:
        """Accepting true-labeled states with a self loop: reaching one makes
        any continuation accepted (pure-safety violations truncate here)."""
        out = set()
        for q in self.accepting:
            pos, neg = self.labels[q]
            if not pos and not neg and q in self.trans[q]:
                out.add(q)
        return out


class _Node:
    __slots__ = ("nid", "incoming", "new", "old", "nxt")

    def __init__(self, nid, incoming, new, old, nxt):
        self.nid = nid
        self.incoming = incoming
        self.new = new
        self.old = old
        self.nxt = nxt


_INIT = -1


def _gpvw(f: Formula):
    """Classic tableau expansion; returns the node list."""
    nodes: dict[tuple, _Node] = {}
    counter = [0]

    def fresh(incoming, new, old, nxt) -> _Node:
        counter[0] += 1
        return _Node(counter[0], set(incoming), set(new), set(old), set(nxt))

    def contradicts(g: Formula, old: set) -> bool:
        if isinstance(g, FalseF):
            return True
        if isinstance(g, Atom) and Not(g) in old:
            return True
        if isinstance(g, Not) and g.sub in old:
            return True
        return False

    def expand(node: _Node):
        if not node.new:
            key = (frozenset(node.old), frozenset(node.nxt))
            existing = nodes.get(key)
            if existing is not None:
                existing.incoming |= node.incoming
                return
            nodes[key] = node
            expand(fresh({node.nid}, node.nxt, set(), set()))
            return
        g = node.new.pop()
        if g in node.old:
            expand(node)
            return
        if contradicts(g, node.old):
            return
        if isinstance(g, (TrueF, Atom, Not)):
            if not isinstance(g, TrueF):
                node.old.add(g)
            expand(node)
        elif isinstance(g, And):
            node.new |= {g.left, g.right} - node.old
            node.old.add(g)
            expand(node)
        elif isinstance(g, Next):
            node.old.add(g)
            node.nxt.add(g.sub)
            expand(node)
        elif isinstance(g, Or):
            n2 = fresh(node.incoming, node.new | ({g.right} - node.old),
                       node.old | {g}, node.nxt)
            node.new |= {g.left} - node.old
            node.old.add(g)
            expand(node)
            expand(n2)
        elif isinstance(g, Until):
            # g = a U b: either b now, or a now and g next
            n2 = fresh(node.incoming, node.new | ({g.right} - node.old),
                       node.old | {g}, node.nxt)
            node.new |= {g.left} - node.old
            node.old.add(g)
            node.nxt.add(g)
            expand(node)
            expand(n2)
        elif isinstance(g, Release):
            # g = a R b: either a and b now, or b now and g next
            n2 = fresh(node.incoming,
                       node.new | ({g.left, g.right} - node.old),
                       node.old | {g}, node.nxt)
            node.new |= {g.right} - node.old
            node.old.add(g)
            node.nxt.add(g)
            expand(node)
            expand(n2)
        else:
            raise FormulaError(f"not in negation normal form: {g!r}")

    expand(fresh({_INIT}, {f}, set(), set()))
    return list(nodes.values())


def to_buchi(f: Formula) -> Buchi:
    """Tableau translation; accepts exactly the words satisfying f (the
    caller negates the property first).  Generalized acceptance (one set per
    until subformula) is degeneralized with the standard counter product."""
    f = nnf(f)
    raw = _gpvw(f)
    index = {n.nid: i for i, n in enumerate(raw)}
    n = len(raw)
    labels = []
    for node in raw:
        pos = frozenset(a.key() for a in node.old if isinstance(a, Atom))
        neg = frozenset(a.sub.key() for a in node.old
                        if isinstance(a, Not) and isinstance(a.sub, Atom))
        labels.append((pos, neg))
    trans: list[list[int]] = [[] for _ in range(n)]
    initial = []
    for j, node in enumerate(raw):
        for src in node.incoming:
            if src == _INIT:
                initial.append(j)
            else:
                trans[index[src]].append(j)
    for row in trans:
        row.sort()
    initial.sort()

    untils = sorted({g for node in raw for g in node.old
                     if isinstance(g, Until)}, key=lambda g: g.render())
    fsets = []
    for u in untils:
        fsets.append(frozenset(
            j for j, node in enumerate(raw)
            if u not in node.old or u.right in node.old or (
                isinstance(u.right, TrueF))))
    if not fsets:
        fsets = [frozenset(range(n))]
    k = len(fsets)
    if k == 1:
        return Buchi(n, initial, labels, trans, fsets[0])

    # counter product: advance the counter when leaving a state of the
    # current acceptance set; accept on (q, 0) with q in the first set
    def did(q: int, i: int) -> int:
        return q * k + i

    dn = n * k
    dlabels = [labels[q] for q in range(n) for _i in range(k)]
    dtrans: list[list[int]] = [[] for _ in range(dn)]
    for q in range(n):
        for i in range(k):
            ni = (i + 1) % k if q in fsets[i] else i
            dtrans[did(q, i)] = [did(q2, ni) for q2 in trans[q]]
    dinit = [did(q, 0) for q in initial]
    dacc = frozenset(did(q, 0) for q in fsets[0])
    return Buchi(dn, dinit, dlabels, dtrans, dacc)


# ---------------------------------------------------------------------------
# lasso words: semantic evaluation and automaton acceptance
# ---------------------------------------------------------------------------


def holds_on_lasso(f: Formula, word: list[frozenset[str]], loop: int) -> bool:
    """Semantic truth of f at position 0 of the ultimately periodic word
    word[0..loop-1] (word[loop..] repeated); the independent oracle for the
    automaton construction."""
    n = len(word)
    if not (0 <= loop < n):
        raise FormulaError("loop start out of range")

    def succ(i: int) -> int:
        return i + 1 if i + 1 < n else loop

    memo: dict[Formula, list[bool]] = {}

    def table(g: Formula) -> list[bool]:
        t = memo.get(g)
        if t is not None:
            return t
        if isinstance(g, TrueF):
            t = [True] * n
        elif isinstance(g, FalseF):
            t = [False] * n
        elif isinstance(g, Atom):
            key = g.key()
            t = [key in word[i] for i in range(n)]
        elif isinstance(g, Not):
            s = table(g.sub)
            t = [not v for v in s]
        elif isinstance(g, And):
            a, b = table(g.left), table(g.right)
            t = [x and y for x, y in zip(a, b)]
        elif isinstance(g, Or):
            a, b = table(g.left), table(g.right)
            t = [x or y for x, y in zip(a, b)]
        elif isinstance(g, Implies):
            a, b = table(g.left), table(g.right)
            t = [(not x) or y for x, y in zip(a, b)]
        elif isinstance(g, Next):
            s = table(g.sub)
            t = [s[succ(i)] for i in range(n)]
        elif isinstance(g, Until):
            a, b = table(g.left), table(g.right)
            t = [False] * n  # least fixpoint
            for _ in range(n + 1):
                changed = False
                for i in range(n - 1, -1, -1):
                    v = b[i] or (a[i] and t[succ(i)])
                    if v != t[i]:
                        t[i] = v
                        changed = True
                if not changed:
                    break
        elif isinstance(g, Release):
            a, b = table(g.left), table(g.right)
            t = [True] * n  # greatest fixpoint
            for _ in range(n + 1):
                changed = False
                for i in range(n - 1, -1, -1):
                    v = b[i] and (a[i] or t[succ(i)])
                    if v != t[i]:
                        t[i] = v
                        changed = True
                if not changed:
                    break
        elif isinstance(g, Always):
            s = table(g.sub)
            t = [True] * n
            for _ in range(n + 1):
                changed = False
                for i in range(n - 1, -1, -1):
                    v = s[i] and t[succ(i)]
                    if v != t[i]:
                        t[i] = v
                        changed = True
                if not changed:
                    break
        else:
            raise FormulaError(f"cannot evaluate {g!r}")
        memo[g] = t
        return t

    return table(f)[0]


def accepts_lasso(aut: Buchi, word: list[frozenset[str]], loop: int) -> bool:
    """Does the automaton accept the ultimately periodic word?"""
    n = len(word)

    def succ(i: int) -> int:
        return i + 1 if i + 1 < n else loop

    # reachable product nodes
    start = [(0, q) for q in aut.initial if aut.satisfied(q, word[0])]
    seen = set(start)
    stack = list(start)
    while stack:
        i, q = stack.pop()
        j = succ(i)
        for q2 in aut.trans[q]:
            if aut.satisfied(q2, word[j]) and (j, q2) not in seen:
                seen.add((j, q2))
                stack.append((j, q2))
    # an accepting node in the cyclic part that can reach itself
    for node in seen:
        i, q = node
        if q not in aut.accepting or i < loop:
            continue
        frontier = [node]
        visited = set()
        while frontier:
            a, b = frontier.pop()
            j = succ(a)
            for b2 in aut.trans[b]:
                nxt = (j, b2)
                if nxt == node:
                    return True
                if nxt in seen and nxt not in visited:
                    visited.add(nxt)
                    frontier.append(nxt)
    return False


# ---------------------------------------------------------------------------
# model checking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchBudget:
    max_states: int = 1_000_000
    max_depth: int = 500_000
    time_limit: Optional[float] = None

    def __post_init__(self):
        if self.max_states <= 0 or self.max_depth <= 0:
            raise CheckError("budget bounds must be positive")
        if self.time_limit is not None and self.time_limit <= 0:
            raise CheckError("time limit must be positive")


@dataclass
class Verdict:
    outcome: str  # "fulfilled" | "refuted" | "budget-exhausted"
    property_text: str
    counterexample: Optional[Trace] = None
    lasso_start: int = -1
    states_explored: int = 0
    product_nodes: int = 0
    elapsed: float = 0.0
    reason: str = ""

    @property
    def fulfilled(self) -> bool:
        return self.outcome == "fulfilled"

    @property
    def refuted(self) -> bool:
        return self.outcome == "refuted"


IDLE_LABEL = "<idle>"


class _Search:
    """Shared machinery: cached successors and valuations over one theory."""

    def __init__(self, theory: Theory, formula: Formula,
                 predicate_fn: Optional[Callable] = None):
        self.theory = theory
        self.formula = formula
        self.neg = nnf(Not(formula))
        self.aut = to_buchi(self.neg)
        self.sinks = self.aut.violation_sinks()
        # states one transition before a violation sink whose obligations
        # involve no rule-label atom: once such obligations hold, any
        # continuation is accepted, so the search can stop at that very state
        self.pre_sinks = set()
        for q in range(self.aut.n):
            pos, neg = self.aut.labels[q]
            if any(k.startswith("@") for k in pos | neg):
                continue
            if any(q2 in self.sinks for q2 in self.aut.trans[q]):
                self.pre_sinks.add(q)
        if predicate_fn is None:
            from .webapp import eval_predicate

            def predicate_fn(name, args, state):
                return eval_predicate(theory, name, args, state)

        self.pred = predicate_fn
        self.state_atoms = sorted(
            (a for a in atoms_of(formula) if not a.on_label),
            key=lambda a: a.key())
        self.label_atoms = sorted(
            (a for a in atoms_of(formula) if a.on_label),
            key=lambda a: a.key())
        self._succ: dict[int, list] = {}
        self._sval: dict[int, frozenset[str]] = {}

    def sys_succ(self, state: Term) -> list:
        got = self._succ.get(id(state))
        if got is None:
            raw = successors(state, self.theory)
            got = []
            seen = set()
            for target, label, triple in raw:
                if (id(target), label) in seen:
                    continue
                seen.add((id(target), label))
                got.append((target, label, triple))
            if not got:
                # terminal states stutter so that words stay infinite
                got = [(state, IDLE_LABEL, None)]
            self._succ[id(state)] = got
        return got

    def state_valuation(self, state: Term) -> frozenset[str]:
        got = self._sval.get(id(state))
        if got is None:
            got = frozenset(a.key() for a in self.state_atoms
                            if self.pred(a.name, a.args, state))
            self._sval[id(state)] = got
        return got

    def valuation(self, state: Term, label: str) -> frozenset[str]:
        v = self.state_valuation(state)
        extra = [a.key() for a in self.label_atoms if a.name == label]
        return v | frozenset(extra) if extra else v


def check(theory: Theory, formula, budget: Optional[SearchBudget] = None,
          predicate_fn: Optional[Callable] = None,
          initial: Optional[Term] = None) -> Verdict:
    """Nested depth-first emptiness check of the product of the reachable
    state graph with the automaton of the negated property."""
    if isinstance(formula, str):
        formula = parse_formula(formula)
    budget = budget or SearchBudget()
    t0 = _time.monotonic()
    if initial is None:
        from .webapp import initial_state as _init

        initial = _init(theory)
    sr = _Search(theory, formula, predicate_fn)
    aut = sr.aut

    text = formula.render()

    def out_of_time() -> bool:
        return (budget.time_limit is not None
                and _time.monotonic() - t0 > budget.time_limit)

    # product edges: ((s, q) -> (t, q2)) for each system edge s -label-> t
    # and automaton edge q -> q2 whose source obligation holds on (s, label)
    def edges(s: Term, q: int):
        for target, label, triple in sr.sys_succ(s):
            v = sr.valuation(s, label)
            if not aut.satisfied(q, v):
                continue
            for q2 in aut.trans[q]:
                yield target, q2, label, triple

    # outer DFS (iterative); parent pointers reconstruct the stem
    visited: set[tuple[int, int]] = set()
    flagged: set[tuple[int, int]] = set()  # inner-DFS colors
    parent: dict[tuple[int, int], tuple] = {}
    on_stack: set[tuple[int, int]] = set()

    init_nodes = [(initial, q) for q in aut.initial]
    counterexample = None

    def budget_verdict(reason: str) -> Verdict:
        return Verdict("budget-exhausted", text,
                       states_explored=len(sr._succ),
                       product_nodes=len(visited),
                       elapsed=_time.monotonic() - t0, reason=reason)

    def immediate_violation(s: Term, q: int) -> bool:
        # the obligations of a sink predecessor hold at s: the automaton can
        # move to the sink and accept any continuation, so s itself is the
        # final state of the counterexample
        return q in sr.pre_sinks and aut.satisfied(q, sr.state_valuation(s))

    for s0, q0 in init_nodes:
        key0 = (id(s0), q0)
        if key0 in visited:
            continue
        visited.add(key0)
        parent[key0] = None
        if immediate_violation(s0, q0):
            counterexample = ([], [], s0)
            break
        stack = [((s0, q0), iter(edges(s0, q0)))]
        on_stack.add(key0)
        while stack:
            if len(visited) > budget.max_states:
                return budget_verdict("state budget exhausted")
            if len(stack) > budget.max_depth:
                return budget_verdict("depth budget exhausted")
            if out_of_time():
                return budget_verdict("time limit exhausted")
            (s, q), it = stack[-1]
            for target, q2, label, triple in it:
                if q2 in sr.sinks:
                    # pure-safety violation: the automaton can accept any
                    # continuation, so the trace truncates right here
                    stem = _stack_path(parent, (id(s), q)) + [
                        ((s, q), (label, triple))]
                    counterexample = (stem, [], target)
                    stack.clear()
                    break
                key = (id(target), q2)
                if key not in visited:
                    visited.add(key)
                    parent[key] = ((s, q), (label, triple))
                    if immediate_violation(target, q2):
                        counterexample = (_stack_path(parent, key), [], target)
                        stack.clear()
                        break
                    stack.append(((target, q2), iter(edges(target, q2))))
                    on_stack.add(key)
                    break
            else:
                # postorder: accepting states seed the inner search
                stack.pop()
                on_stack.discard((id(s), q))
                if q in aut.accepting:
                    cyc = _inner_dfs(sr, aut, (s, q), on_stack, flagged,
                                     budget, t0)
                    if cyc == "budget":
                        return budget_verdict("inner search budget exhausted")
                    if cyc is not None:
                        path, back = cyc
                        stem = _stack_path(parent, (id(s), q))
                        # the inner path reaches a node still on the outer
                        # stack; the stem segment from that node back to the
                        # seed closes the accepting cycle
                        if back == (id(s), q):
                            cycle = path
                        else:
                            j = next(i for i, (node, _e) in enumerate(stem)
                                     if (id(node[0]), node[1]) == back)
                            cycle = path + stem[j:]
                        counterexample = (stem, cycle, None)
                        stack.clear()
            if counterexample is not None:
                break
        if counterexample is not None:
            break

    elapsed = _time.monotonic() - t0
    if counterexample is None:
        return Verdict("fulfilled", text, states_explored=len(sr._succ),
                       product_nodes=len(visited), elapsed=elapsed)
    trace, lasso_start = _materialize(sr, counterexample)
    v = Verdict("refuted", text, counterexample=trace, lasso_start=lasso_start,
                states_explored=len(sr._succ), product_nodes=len(visited),
                elapsed=elapsed)
    _validate_counterexample(sr, v)
    return v


def _stack_path(parent, key):
    """Chain of ((state, q), (label, triple)) pairs from the root to key,
    excluding key itself."""
    out = []
    while True:
        p = parent[key]
        if p is None:
            return list(reversed(out))
        (node, edge) = p
        out.append((node, edge))
        key = (id(node[0]), node[1])


def _inner_dfs(sr, aut, seed, outer_stack, flagged, budget, t0):
    """Search for a path from the accepting seed back to itself or to a node
    still on the outer stack; returns (edge path, reached node key) or None."""
    s0, q0 = seed
    seed_key = (id(s0), q0)
    parent: dict[tuple[int, int], tuple] = {seed_key: None}
    stack = [seed]
    while stack:
        if (budget.time_limit is not None
                and _time.monotonic() - t0 > budget.time_limit):
            return "budget"
        s, q = stack.pop()
        for target, q2, label, triple in _product_edges(sr, aut, s, q):
            key = (id(target), q2)
            if key == seed_key or key in outer_stack:
                path = _chain(parent, (id(s), q)) + [((s, q), (label, triple))]
                return path, key
            if key not in flagged:
                flagged.add(key)
                parent[key] = ((s, q), (label, triple))
                stack.append((target, q2))
    return None


def _product_edges(sr, aut, s, q):
    for target, label, triple in sr.sys_succ(s):
        v = sr.valuation(s, label)
        if not aut.satisfied(q, v):
            continue
        for q2 in aut.trans[q]:
            yield target, q2, label, triple


def _chain(parent, key):
    out = []
    while True:
        p = parent.get(key)
        if p is None:
            return list(reversed(out))
        node, edge = p
        out.append((node, edge))
        key = (id(node[0]), node[1])


def _materialize(sr: _Search, counterexample) -> tuple[Trace, int]:
    """Expand the product lasso into a full trace with every step recorded."""
    theory = sr.theory
    stem, cycle, sink_state = counterexample

    edge_list = []  # (source_state, label, triple)
    for (node, edge) in stem:
        edge_list.append((node[0], edge[0], edge[1]))
    lasso_edge_index = len(edge_list)
    for (node, edge) in cycle:
        edge_list.append((node[0], edge[0], edge[1]))

    if not edge_list:
        states = [sink_state]
        tr = Trace(states, [], theory.content_hash(),
                   property_text=sr.formula.render(),
                   metadata={"system_state_indices": [0], "edge_labels": [],
                             "lasso_start": 0})
        return tr, 0

    states: list[Term] = [edge_list[0][0]]
    steps = []
    sys_indices: list[int] = [0]
    labels: list[str] = []
    lasso_state_index = 0 if lasso_edge_index == 0 else None
    for n, (src, label, triple) in enumerate(edge_list):
        if n == lasso_edge_index:
            lasso_state_index = len(states) - 1
        if triple is None:
            # stutter edge on a terminal state: the state repeats forever, so
            # the trace truncates here and the lasso starts at the end
            break
        rule, pos, m = triple
        target, inter, st = apply_step(states[-1], rule, pos, m, theory)
        states.extend(inter)
        steps.extend(st)
        sys_indices.append(len(states) - 1)
        labels.append(label)
    if lasso_state_index is None or lasso_state_index > len(states) - 1:
        lasso_state_index = len(states) - 1

    tr = Trace(states, steps, theory.content_hash(),
               property_text=sr.formula.render(),
               metadata={
                   "system_state_indices": sys_indices,
                   "edge_labels": labels,
                   "lasso_start": lasso_state_index,
               })
    return tr, lasso_state_index


def _validate_counterexample(sr: _Search, verdict: Verdict):
    """Every refutation must replay bit-exactly and its valuation word must
    be accepted by the automaton of the negated property."""
    from .rewrite import replay_trace

    tr = verdict.counterexample
    replay_trace(sr.theory, tr, check=True)
    idxs = tr.metadata["system_state_indices"]
    labels = tr.metadata["edge_labels"]
    sys_states = [tr.states[i] for i in idxs]
    loop_sys = idxs.index(verdict.lasso_start)
    if verdict.lasso_start == len(tr.states) - 1:
        # safety truncation: the final state stutters forever
        word = [sr.valuation(st, labels[i] if i < len(labels) else IDLE_LABEL)
                for i, st in enumerate(sys_states)]
    else:
        # the final state duplicates the lasso head; the word loops instead
        if tr.states[-1] is not tr.states[verdict.lasso_start]:
            raise CheckError("counterexample cycle does not close")
        word = [sr.valuation(sys_states[i], labels[i])
                for i in range(len(sys_states) - 1)]
    if not accepts_lasso(sr.aut, word, loop_sys):
        raise CheckError("counterexample word rejected by the automaton")


def naive_check(theory: Theory, formula,
                predicate_fn: Optional[Callable] = None,
                initial: Optional[Term] = None) -> str:
    """Independent emptiness decision: build the whole product graph and look
    for a reachable strongly connected component that contains an accepting
    node and at least one edge.  Returns "fulfilled" or "refuted"; only
    suitable for models that fit in memory."""
    if isinstance(formula, str):
        formula = parse_formula(formula)
    if initial is None:
        from .webapp import initial_state as _init

        initial = _init(theory)
    sr = _Search(theory, formula, predicate_fn)
    aut = sr.aut

    succ: dict[tuple[int, int], list[tuple[int, int]]] = {}
    nodes: dict[tuple[int, int], tuple[Term, int]] = {}
    roots = []
    for q in aut.initial:
        key = (id(initial), q)
        nodes[key] = (initial, q)
        roots.append(key)
    frontier = list(roots)
    while frontier:
        key = frontier.pop()
        if key in succ:
            continue
        s, q = nodes[key]
        outs = []
        for target, q2, _label, _triple in _product_edges(sr, aut, s, q):
            k2 = (id(target), q2)
            if k2 not in nodes:
                nodes[k2] = (target, q2)
                frontier.append(k2)
            outs.append(k2)
        succ[key] = outs

    # Tarjan, iterative
    index: dict = {}
    low: dict = {}
    comp: dict = {}
    stack_s: list = []
    on: set = set()
    counter = [0]
    ncomp = [0]
    for root in roots:
        if root in index:
            continue
        work = [(root, 0)]
        while work:
            v, pi = work.pop()
            if pi == 0:
                index[v] = low[v] = counter[0]
                counter[0] += 1
                stack_s.append(v)
                on.add(v)
            recurse = False
            outs = succ[v]
            for i in range(pi, len(outs)):
                w = outs[i]
                if w not in index:
                    work.append((v, i + 1))
                    work.append((w, 0))
                    recurse = True
                    break
                if w in on:
                    low[v] = min(low[v], index[w])
            if recurse:
                continue
            if low[v] == index[v]:
                while True:
                    w = stack_s.pop()
                    on.discard(w)
                    comp[w] = ncomp[0]
                    if w == v:
                        break
                ncomp[0] += 1
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])

    members: dict[int, list] = {}
    for k, c in comp.items():
        members.setdefault(c, []).append(k)
    for c, ks in members.items():
        has_acc = any(nodes[k][1] in aut.accepting for k in ks)
        if not has_acc:
            continue
        kset = set(ks)
        has_edge = any(w in kset for k in ks for w in succ[k])
        if has_edge:
            return "refuted"
    return "fulfilled"
