"""Sorted terms over a user-declared signature.

Terms are hash-consed: structurally equal terms are the same object, so
equality and hashing are O(1).  Canonical forms flatten nested applications
of associative operators into a single variadic node, absorb identity
elements, and (for commutative operators) sort the argument list by the
rendered form of each argument.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional

Position = tuple[int, ...]
ROOT: Position = ()


class TermError(Exception):
    pass


class SortError(TermError):
    pass


class ParseError(TermError):
    def __init__(self, msg: str, pos: int = -1):
        super().__init__(msg if pos < 0 else f"{msg} (at offset {pos})")
        self.offset = pos


class PositionError(TermError):
    pass


class MatchCapExceeded(TermError):
    pass


def pos_str(p: Position) -> str:
    return "Λ" + "".join(f".{i}" for i in p)


_POS_RE = re.compile(r"^(?:Λ|L|Lambda)?\.?((?:\d+)(?:\.\d+)*)?$")


def parse_position(text: str) -> Position:
    text = text.strip()
    m = _POS_RE.match(text)
    if not m:
        raise ParseError(f"bad position: {text!r}")
    if not m.group(1):
        return ()
    return tuple(int(x) for x in m.group(1).split("."))


@dataclass(frozen=True)
class OperatorDecl:
    name: str
    arg_sorts: tuple[str, ...]
    result_sort: str
    assoc: bool = False
    comm: bool = False
    identity: Optional[str] = None  # name of the identity constant
    ctor: bool = True

    def __post_init__(self):
        if self.identity is not None and not self.assoc:
            raise SortError(f"{self.name}: identity attribute requires assoc")
        if self.assoc:
            if len(self.arg_sorts) != 2 or any(
                s != self.result_sort for s in self.arg_sorts
            ):
                raise SortError(
                    f"{self.name}: assoc requires a binary operator whose "
                    f"argument sorts equal its result sort"
                )

    @property
    def arity(self) -> int:
        return len(self.arg_sorts)


@dataclass(frozen=True)
class LiteralFamily:
    """Implicitly declared constants recognised by a token pattern."""

    name: str
    pattern: re.Pattern
    sort: str


def string_literal_family(sort: str) -> LiteralFamily:
    return LiteralFamily("string", re.compile(r'^"[^"]*"$'), sort)


def nat_literal_family(sort: str) -> LiteralFamily:
    return LiteralFamily("nat", re.compile(r"^\d+$"), sort)


def qid_literal_family(sort: str) -> LiteralFamily:
    return LiteralFamily("qid", re.compile(r"^'[A-Za-z0-9_\-.]+$"), sort)


APP, VAR, HOLE = 0, 1, 2


class Term:
    """A node of a sorted term tree (application, variable or hole).

    Holes only occur in sliced terms; they remember the sort of the subterm
    they erased.  Instances are interned per signature: use Signature.app /
    Signature.var / Signature.hole to build them.
    """

    __slots__ = ("kind", "op", "args", "sort", "_render", "_size", "_canon")

    def __init__(self, kind: int, op: str, args: tuple["Term", ...], sort: str):
        self.kind = kind
        self.op = op
        self.args = args
        self.sort = sort
        self._render = None
        self._size = None
        self._canon = None

    @property
    def is_var(self) -> bool:
        return self.kind == VAR

    @property
    def is_hole(self) -> bool:
        return self.kind == HOLE

    def render(self) -> str:
        r = self._render
        if r is None:
            if self.kind == HOLE:
                r = "*"
            elif not self.args:
                r = self.op
            else:
                r = f"{self.op}({', '.join(a.render() for a in self.args)})"
            self._render = r
        return r

    def symbol_count(self) -> int:
        n = self._size
        if n is None:
            n = 1 + sum(a.symbol_count() for a in self.args)
            self._size = n
        return n

    def positions(self) -> list[Position]:
        out: list[Position] = []

        def walk(t: Term, p: Position):
            out.append(p)
            for i, a in enumerate(t.args, 1):
                walk(a, p + (i,))

        walk(self, ())
        return out

    def variables(self) -> set[str]:
        out: set[str] = set()

        def walk(t: Term):
            if t.kind == VAR:
                out.add(t.op)
            for a in t.args:
                walk(a)

        walk(self)
        return out

    def __repr__(self):
        return f"<{self.render()}:{self.sort}>"


class Signature:
    """Sorts, operator declarations and literal families; owns term interning."""

    def __init__(self, sorts: Iterable[str] = ()):
        self.sorts: set[str] = set(sorts)
        self.ops: dict[str, list[OperatorDecl]] = {}
        self.literals: list[LiteralFamily] = []
        self.declared_vars: dict[str, str] = {}
        self._intern: dict[tuple, Term] = {}
        self._op_cache: dict[tuple[str, int], Optional[OperatorDecl]] = {}
        self._det_cache: dict[int, bool] = {}

    # -- declarations -------------------------------------------------

    def add_sort(self, name: str) -> str:
        self.sorts.add(name)
        return name

    def declare(self, decl: OperatorDecl) -> OperatorDecl:
        for s in decl.arg_sorts + (decl.result_sort,):
            if s not in self.sorts:
                raise SortError(f"{decl.name}: unknown sort {s}")
        existing = self.ops.setdefault(decl.name, [])
        for d in existing:
            if len(d.arg_sorts) == decl.arity:
                raise SortError(f"duplicate operator {decl.name}/{decl.arity}")
        existing.append(decl)
        self._op_cache.clear()
        return decl

    def op(
        self,
        name: str,
        arg_sorts: Iterable[str],
        result_sort: str,
        assoc: bool = False,
        comm: bool = False,
        identity: Optional[str] = None,
        ctor: bool = True,
    ) -> OperatorDecl:
        return self.declare(
            OperatorDecl(name, tuple(arg_sorts), result_sort, assoc, comm, identity, ctor)
        )

    def const(self, name: str, sort: str, ctor: bool = True) -> OperatorDecl:
        return self.op(name, (), sort, ctor=ctor)

    def add_literal_family(self, fam: LiteralFamily):
        if fam.sort not in self.sorts:
            raise SortError(f"literal family {fam.name}: unknown sort {fam.sort}")
        self.literals.append(fam)

    def declare_var(self, name: str, sort: str):
        self.declared_vars[name] = sort

    def validate(self):
        """Check the cross-declaration invariants (identity constants exist)."""
        for decls in self.ops.values():
            for d in decls:
                if d.identity is not None:
                    idd = self.find_op(d.identity, 0)
                    if idd is None or idd.result_sort != d.result_sort:
                        raise SortError(
                            f"{d.name}: identity {d.identity} is not a declared "
                            f"constant of sort {d.result_sort}"
                        )

    # -- lookups ------------------------------------------------------

    def find_op(self, name: str, arity: int) -> Optional[OperatorDecl]:
        key = (name, arity)
        cached = self._op_cache.get(key, False)
        if cached is not False:
            return cached
        found = None
        decls = self.ops.get(name)
        if decls is not None:
            for d in decls:
                if d.arity == arity or (d.assoc and arity >= 2):
                    found = d
                    break
        self._op_cache[key] = found
        return found

    def literal_sort(self, token: str) -> Optional[str]:
        for fam in self.literals:
            if fam.pattern.match(token):
                return fam.sort
        return None

    def decl_of(self, t: Term) -> Optional[OperatorDecl]:
        if t.kind != APP:
            return None
        return self.find_op(t.op, len(t.args))

    def identity_term(self, decl: OperatorDecl) -> Optional[Term]:
        if decl.identity is None:
            return None
        return self.app(decl.identity, ())

    # -- construction -------------------------------------------------

    def _mk(self, kind: int, op: str, args: tuple[Term, ...], sort: str) -> Term:
        key = (kind, op, sort, tuple(id(a) for a in args))
        t = self._intern.get(key)
        if t is None:
            t = Term(kind, op, args, sort)
            self._intern[key] = t
        return t

    def app(self, name: str, args: Iterable[Term] = ()) -> Term:
        args = tuple(args)
        decl = self.find_op(name, len(args))
        if decl is None:
            if not args:
                lit = self.literal_sort(name)
                if lit is not None:
                    return self._mk(APP, name, (), lit)
            raise SortError(f"unknown operator {name}/{len(args)}")
        if decl.assoc and len(args) >= 2:
            for a in args:
                if a.sort != decl.result_sort:
                    raise SortError(
                        f"{name}: argument {a.render()} has sort {a.sort}, "
                        f"expected {decl.result_sort}"
                    )
        else:
            for a, s in zip(args, decl.arg_sorts):
                if a.sort != s:
                    raise SortError(
                        f"{name}: argument {a.render()} has sort {a.sort}, expected {s}"
                    )
        return self._mk(APP, name, args, decl.result_sort)

    def var(self, name: str, sort: str) -> Term:
        if sort not in self.sorts:
            raise SortError(f"variable {name}: unknown sort {sort}")
        return self._mk(VAR, name, (), sort)

    def hole(self, sort: str) -> Term:
        return self._mk(HOLE, "*", (), sort)

    # convenience used all over the tests
    def parse(self, text: str) -> Term:
        return parse_term(text, self)


# ---------------------------------------------------------------------------
# positions
# ---------------------------------------------------------------------------


def subterm_at(t: Term, p: Position) -> Term:
    cur = t
    for i in p:
        if i < 1 or i > len(cur.args):
            raise PositionError(f"position {pos_str(p)} invalid in {t.render()}")
        cur = cur.args[i - 1]
    return cur


def is_valid_position(t: Term, p: Position) -> bool:
    cur = t
    for i in p:
        if i < 1 or i > len(cur.args):
            return False
        cur = cur.args[i - 1]
    return True


def replace_at_raw(sig: Signature, t: Term, p: Position, s: Term) -> Term:
    """Replace the subterm at p without re-canonicalizing."""
    if not p:
        return s
    i = p[0]
    if t.kind != APP or i < 1 or i > len(t.args):
        raise PositionError(f"position {pos_str(p)} invalid in {t.render()}")
    new_args = list(t.args)
    new_args[i - 1] = replace_at_raw(sig, t.args[i - 1], p[1:], s)
    if t.kind == HOLE:
        raise PositionError("cannot descend into a hole")
    return _rebuild(sig, t, tuple(new_args))


def _rebuild(sig: Signature, t: Term, args: tuple[Term, ...]) -> Term:
    if t.kind == VAR:
        raise PositionError("cannot descend into a variable")
    return sig._mk(t.kind, t.op, args, t.sort)


def replace_at(sig: Signature, t: Term, p: Position, s: Term) -> Term:
    """Replace the subterm at p by s and return the canonical form."""
    old = subterm_at(t, p)
    if old.sort != s.sort:
        raise SortError(
            f"replacement sort {s.sort} clashes with {old.sort} at {pos_str(p)}"
        )
    return flatten(sig, replace_at_raw(sig, t, p, s))


# ---------------------------------------------------------------------------
# canonical (flattened) forms
# ---------------------------------------------------------------------------


def _sort_key(t: Term) -> str:
    return t.render()


def flatten(sig: Signature, t: Term) -> Term:
    """Canonical form: merge nested same-assoc-operator applications, absorb
    identity elements and sort arguments of commutative operators."""
    c = t._canon
    if c is None:
        c, _ = flatten_with_map(sig, t)
        t._canon = c
        c._canon = c
    return c


@dataclass(frozen=True)
class Reshape:
    """Positional record of a flat or unflat transformation.

    ``skeleton`` is the target term with holes punched at every moved subtree;
    ``pairs`` maps groups of source paths to the hole positions (a group of
    several sources is rebuilt as one flattened node, in the recorded order);
    ``node_src`` records, for each skeleton node, the source node it stems
    from (used for backward position mapping).
    """

    skeleton: Term
    pairs: tuple[tuple[tuple[Position, ...], Position], ...]
    node_src: tuple[tuple[Position, Position], ...]

    def backward_map(self, p: Position) -> list[Position]:
        """Map a target-side position (relative to the reshaped node) to the
        source-side positions it stems from."""
        for srcs, dst in self.pairs:
            if p[: len(dst)] == dst:
                rest = p[len(dst):]
                if len(srcs) == 1:
                    return [srcs[0] + rest]
                # the hole was filled with a rebuilt flattened node
                if rest:
                    k = rest[0]
                    if 1 <= k <= len(srcs):
                        return [srcs[k - 1] + rest[1:]]
                return [s for s in srcs]
        for dst, src in self.node_src:
            if p == dst:
                return [src]
        # fall back to the nearest recorded ancestor
        best: Optional[Position] = None
        best_len = -1
        for dst, src in self.node_src:
            if p[: len(dst)] == dst and len(dst) > best_len:
                best, best_len = src, len(dst)
        return [best] if best is not None else [()]

    def apply(self, sig: Signature, source: Term) -> Term:
        """Rebuild the target from a (possibly modified) source, positionally.

        A recorded path may descend into a region that the caller has since
        collapsed to a leaf (sliced traces refill erased subtrees with junk
        terms); the deepest still-present node stands in for such paths.
        """

        def grab(path: Position) -> Term:
            t = source
            for i in path:
                if not (1 <= i <= len(t.args)):
                    return t
                t = t.args[i - 1]
            return t

        grabbed: dict[Position, Term] = {}
        for srcs, dst in self.pairs:
            parts = [grab(s) for s in srcs]
            if len(parts) == 1:
                grabbed[dst] = parts[0]
            else:
                node = subterm_at(self.skeleton, dst)
                # rebuild the flattened node under the same operator
                grabbed[dst] = sig._mk(APP, _hole_group_op(self, dst), tuple(parts),
                                       parts[0].sort)
        return _fill(sig, self.skeleton, (), grabbed)


def _hole_group_op(r: Reshape, dst: Position) -> str:
    # a multi-source group is always rebuilt under the assoc operator of the
    # skeleton node enclosing the hole
    t = r.skeleton
    for i in dst[:-1]:
        t = t.args[i - 1]
    return t.op


def _fill(sig: Signature, skel: Term, p: Position, grabbed: dict[Position, Term]) -> Term:
    if p in grabbed:
        return grabbed[p]
    if skel.kind == HOLE:
        raise PositionError(f"unfilled hole at {pos_str(p)}")
    if not skel.args:
        return skel
    args = tuple(
        _fill(sig, a, p + (i,), grabbed) for i, a in enumerate(skel.args, 1)
    )
    return sig._mk(skel.kind, skel.op, args, skel.sort)


def flatten_with_map(sig: Signature, t: Term) -> tuple[Term, Reshape]:
    canon, rigid, pairs, node_src = _fwm(sig, t)
    if rigid:
        pairs = [(((),), ())]
        node_src = []
        skel = sig.hole(canon.sort)
    else:
        skel = _punch(sig, canon, (), {dst for _s, dst in pairs})
    return canon, Reshape(
        skel,
        tuple((tuple(s), d) for s, d in pairs),
        tuple(node_src),
    )


def _punch(sig: Signature, t: Term, p: Position, holes: set[Position]) -> Term:
    if p in holes:
        return sig.hole(t.sort)
    if not t.args:
        return t
    args = tuple(_punch(sig, a, p + (i,), holes) for i, a in enumerate(t.args, 1))
    return sig._mk(t.kind, t.op, args, t.sort)


def _fwm(sig: Signature, t: Term):
    """Returns (canon, rigid, pairs, node_src); paths relative to t."""
    if t.kind != APP or not t.args:
        return t, True, [], []
    # a term marked as its own canonical form needs no walk at all
    if t._canon is t:
        return t, True, [], []
    decl = sig.decl_of(t)
    if decl is None:
        raise SortError(f"undeclared operator {t.op}/{len(t.args)}")
    if not decl.assoc:
        child = [_fwm(sig, a) for a in t.args]
        if all(c[1] for c in child):
            t._canon = t
            return t, True, [], []
        pairs, node_src = [], [((), ())]
        args = []
        for i, (canon, rigid, cp, cns) in enumerate(child, 1):
            args.append(canon)
            if rigid:
                pairs.append(([(i,)], (i,)))
            else:
                pairs.extend(([(i,) + s for s in srcs], (i,) + d) for srcs, d in cp)
                node_src.extend(((i,) + d, (i,) + s) for d, s in cns)
        return sig._mk(APP, t.op, tuple(args), t.sort), False, pairs, node_src

    # associative operator: collect the cluster of same-operator leaves
    leaves: list[tuple[Position, Term]] = []

    def collect(u: Term, p: Position):
        if u.kind == APP and u.op == t.op and len(u.args) >= 2:
            for i, a in enumerate(u.args, 1):
                collect(a, p + (i,))
        else:
            leaves.append((p, u))

    collect(t, ())
    # items: (arg_term, pairs with src relative to t / dst relative to arg,
    #         node_src likewise)
    items: list[tuple[Term, list, list]] = []
    for p, leaf in leaves:
        canon, rigid, cp, cns = _fwm(sig, leaf)
        if rigid:
            cp, cns = [([()], ())], []
        if decl.identity is not None and canon.kind == APP and canon.op == decl.identity:
            continue  # absorbed
        cp = [([p + s for s in srcs], d) for srcs, d in cp]
        cns = [(d, p + s) for d, s in cns]
        if canon.kind == APP and canon.op == t.op and len(canon.args) >= 2:
            # a different operator collapsed into this one: splice its args
            for j, a in enumerate(canon.args, 1):
                pj, nj = _project_mapping(cp, cns, (j,))
                items.append((a, pj, nj))
        else:
            items.append((canon, cp, cns))

    if decl.comm:
        items.sort(key=lambda e: _sort_key(e[0]))

    if not items:
        ident = sig.identity_term(decl)
        assert ident is not None
        return ident, False, [], [((), ())]
    if len(items) == 1:
        a, cp, cns = items[0]
        return a, False, cp, cns

    args = []
    pairs = []
    node_src = [((), ())]
    for i, (a, cp, cns) in enumerate(items, 1):
        args.append(a)
        pairs.extend((srcs, (i,) + d) for srcs, d in cp)
        node_src.extend(((i,) + d, s) for d, s in cns)
    canon = sig._mk(APP, t.op, tuple(args), decl.result_sort)
    if canon is t:
        t._canon = t
        return canon, True, [], []
    return canon, False, pairs, node_src


def _project_mapping(cp, cns, sub: Position):
    """Restrict a (pairs, node_src) mapping to the target subtree at sub."""
    pairs2, ns2 = [], []
    for srcs, d in cp:
        if d[: len(sub)] == sub:
            pairs2.append((srcs, d[len(sub):]))
        elif sub[: len(d)] == d:
            pairs2.append(([srcs[0] + sub[len(d):]], ()))
    for d, s in cns:
        if d[: len(sub)] == sub:
            ns2.append((d[len(sub):], s))
    return pairs2, ns2


# ---------------------------------------------------------------------------
# unflattening
# ---------------------------------------------------------------------------


def unflatten(sig: Signature, t: Term, shape: Optional[Term] = None) -> tuple[Term, Reshape]:
    """Rebuild a binary nesting of a canonical term's flattened arguments.

    ``shape`` is a term AC-equal to t whose nesting is to be reproduced; when
    absent a left-comb nesting is produced.  The returned Reshape maps each
    flattened argument position to its path in the unflattened term.
    """
    t = flatten(sig, t)
    if t.kind != APP:
        ident = Reshape(sig.hole(t.sort), ((((),), ()),), ())
        return t, ident
    decl = sig.decl_of(t)
    if decl is None or not decl.assoc or len(t.args) < 2:
        ident = Reshape(sig.hole(t.sort), ((((),), ()),), ())
        return t, ident
    args = list(t.args)
    if shape is None:
        # left comb: f(f(f(a1,a2),a3),a4)
        result = args[0]
        for k in range(1, len(args)):
            result = sig._mk(APP, t.op, (result, args[k]), t.sort)
        # recompute paths: arg i sits at (1,)*(n-1-i) + ((2,) if i else (1,))
        n = len(args)
        pairs = []
        for i in range(n):
            if i == 0:
                path = (1,) * (n - 1)
            else:
                path = (1,) * (n - 1 - i) + (2,)
            pairs.append((((i + 1,),), path))
        skel = _comb_skeleton(sig, t.op, t.sort, n)
        node_src = tuple((d, ()) for d in _comb_nodes(n))
        return result, Reshape(skel, tuple(pairs), node_src)

    # shape-directed: match the multiset of shape leaves against args
    leaf_paths: list[tuple[Position, Term]] = []

    def collect(u: Term, p: Position):
        if u.kind == APP and u.op == t.op and len(u.args) == 2:
            collect(u.args[0], p + (1,))
            collect(u.args[1], p + (2,))
        else:
            leaf_paths.append((p, u))

    collect(shape, ())
    if sorted(_sort_key(x) for _p, x in leaf_paths) != sorted(
        _sort_key(a) for a in args
    ):
        raise TermError("shape argument multiset differs from the term's")
    used = [False] * len(args)
    pairs = []
    grabbed = {}
    for p, leaf in leaf_paths:
        for i, a in enumerate(args):
            if not used[i] and a is flatten(sig, leaf):
                used[i] = True
                pairs.append((((i + 1,),), p))
                grabbed[p] = a
                break
        else:  # pragma: no cover - guarded by the multiset check
            raise TermError("shape leaf not found among arguments")
    skel = _shape_skeleton(sig, shape, t.op, t.sort, set(p for _s, p in pairs))
    node_src = tuple(
        (d, ())
        for d in _skeleton_node_positions(skel)
    )
    result = _fill(sig, skel, (), grabbed)
    return result, Reshape(skel, tuple(pairs), node_src)


def _comb_skeleton(sig: Signature, op: str, sort: str, n: int) -> Term:
    node = sig._mk(APP, op, (sig.hole(sort), sig.hole(sort)), sort)
    for _ in range(n - 2):
        node = sig._mk(APP, op, (node, sig.hole(sort)), sort)
    return node


def _comb_nodes(n: int) -> list[Position]:
    return [(1,) * k for k in range(n - 1)]


def _shape_skeleton(sig: Signature, shape: Term, op: str, sort: str,
                    holes: set[Position]) -> Term:
    def build(u: Term, p: Position) -> Term:
        if p in holes:
            return sig.hole(u.sort)
        return sig._mk(APP, op, tuple(build(a, p + (i,)) for i, a in enumerate(u.args, 1)), sort)

    return build(shape, ())


def _skeleton_node_positions(skel: Term) -> list[Position]:
    out = []

    def walk(t: Term, p: Position):
        if t.kind == APP and t.args:
            out.append(p)
            for i, a in enumerate(t.args, 1):
                walk(a, p + (i,))

    walk(skel, ())
    return out


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<string>"[^"]*") |
        (?P<qid>'[A-Za-z0-9_\-.]+) |
        (?P<name>[A-Za-z0-9\#][A-Za-z0-9_\-\#]*|_[A-Za-z0-9_\-\#]+) |
        (?P<blank>_) |
        (?P<qmark>\?) |
        (?P<hole>[•*]) |
        (?P<lpar>\() |
        (?P<rpar>\)) |
        (?P<comma>,)
    )""",
    re.VERBOSE,
)


def tokenize(text: str) -> list[tuple[str, str, int]]:
    out = []
    i = 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if not m or m.end() == m.start():
            if text[i:].strip() == "":
                break
            raise ParseError(f"unexpected character {text[i]!r}", i)
        kind = m.lastgroup
        out.append((kind, m.group(kind), m.start(kind)))
        i = m.end()
    return out


class _TermParser:
    def __init__(self, tokens, sig: Signature, allow_holes=False):
        self.toks = tokens
        self.i = 0
        self.sig = sig
        self.allow_holes = allow_holes

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None, -1)

    def next(self):
        t = self.peek()
        self.i += 1
        return t

    def expect(self, kind):
        k, v, p = self.next()
        if k != kind:
            raise ParseError(f"expected {kind}, got {v!r}", p)
        return v

    def parse(self, expected_sort: Optional[str] = None) -> Term:
        t = self.term(expected_sort)
        k, v, p = self.peek()
        if k is not None:
            raise ParseError(f"trailing input {v!r}", p)
        return t

    def term(self, expected: Optional[str]) -> Term:
        kind, val, p = self.next()
        sig = self.sig
        if kind in ("string", "qid"):
            s = sig.literal_sort(val)
            if s is None:
                raise ParseError(f"no literal family accepts {val!r}", p)
            self._check(s, expected, val, p)
            return sig._mk(APP, val, (), s)
        if kind == "hole":
            if not self.allow_holes:
                raise ParseError("holes are not allowed here", p)
            if expected is None:
                raise ParseError("cannot infer the sort of a hole", p)
            return sig.hole(expected)
        if kind != "name":
            raise ParseError(f"unexpected token {val!r}", p)
        name = val
        if self.peek()[0] == "lpar":
            self.next()
            args_raw: list = []
            if self.peek()[0] != "rpar":
                while True:
                    args_raw.append(self._save())
                    if self.peek()[0] == "comma":
                        self.next()
                        continue
                    break
            self.expect("rpar")
            decl = sig.find_op(name, len(args_raw))
            if decl is None:
                raise ParseError(f"unknown operator {name}/{len(args_raw)}", p)
            if decl.assoc and len(args_raw) >= 2:
                arg_sorts = [decl.result_sort] * len(args_raw)
            else:
                arg_sorts = list(decl.arg_sorts)
            args = [self._replay(save, s) for save, s in zip(args_raw, arg_sorts)]
            self._check(decl.result_sort, expected, name, p)
            return sig.app(name, args)
        # bare name: constant, declared variable, or uppercase variable
        decl = sig.find_op(name, 0)
        if decl is not None:
            self._check(decl.result_sort, expected, name, p)
            return sig.app(name, ())
        lit = sig.literal_sort(name)
        if lit is not None:
            self._check(lit, expected, name, p)
            return sig._mk(APP, name, (), lit)
        if name in sig.declared_vars:
            s = sig.declared_vars[name]
            self._check(s, expected, name, p)
            return sig.var(name, s)
        if name[0].isupper():
            if expected is None:
                raise ParseError(f"cannot infer the sort of variable {name}", p)
            return sig.var(name, expected)
        raise ParseError(f"unknown name {name!r}", p)

    def _check(self, actual, expected, what, p):
        if expected is not None and actual != expected:
            raise ParseError(f"{what}: sort {actual} where {expected} expected", p)

    # two-pass trick: remember token spans of each argument, then reparse
    # with the expected sort once the operator is resolved
    def _save(self):
        start = self.i
        depth = 0
        while self.i < len(self.toks):
            k = self.toks[self.i][0]
            if k == "lpar":
                depth += 1
            elif k == "rpar":
                if depth == 0:
                    break
                depth -= 1
            elif k == "comma" and depth == 0:
                break
            self.i += 1
        return (start, self.i)

    def _replay(self, span, expected) -> Term:
        sub = _TermParser(self.toks[span[0]: span[1]], self.sig, self.allow_holes)
        t = sub.parse(expected)
        return t


def parse_term(text: str, sig: Signature, expected_sort: Optional[str] = None,
               canonical: bool = True, allow_holes: bool = False) -> Term:
    t = _TermParser(tokenize(text), sig, allow_holes).parse(expected_sort)
    return flatten(sig, t) if canonical else t


# ---------------------------------------------------------------------------
# substitution / instantiation
# ---------------------------------------------------------------------------


class Substitution:
    """An immutable variable binding map."""

    __slots__ = ("bindings", "_key")

    def __init__(self, bindings: dict[str, Term]):
        self.bindings = dict(bindings)
        self._key = None

    def key(self) -> tuple:
        # deterministic across runs: rendered forms, not object identities
        k = self._key
        if k is None:
            k = tuple(sorted((n, v.render(), v.sort)
                             for n, v in self.bindings.items()))
            self._key = k
        return k

    def __getitem__(self, name: str) -> Term:
        return self.bindings[name]

    def get(self, name: str) -> Optional[Term]:
        return self.bindings.get(name)

    def __contains__(self, name):
        return name in self.bindings

    def __eq__(self, other):
        return isinstance(other, Substitution) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        inner = ", ".join(f"{k} -> {v.render()}" for k, v in sorted(self.bindings.items()))
        return "{" + inner + "}"

    def items(self):
        return sorted(self.bindings.items())


def instantiate(sig: Signature, t: Term, sub: Substitution) -> Term:
    """Literal instantiation: no canonicalization is applied on top."""
    if t.kind == VAR:
        b = sub.get(t.op)
        if b is None:
            raise TermError(f"unbound variable {t.op}")
        return b
    if not t.args:
        return t
    return sig._mk(APP, t.op, tuple(instantiate(sig, a, sub) for a in t.args), t.sort)


# ---------------------------------------------------------------------------
# matching modulo assoc / comm / identity
# ---------------------------------------------------------------------------


@dataclass
class Match:
    """A matcher: substitution plus, per associative pattern node, the
    assignment of subject argument indices to pattern argument slots."""

    sub: Substitution
    groups: dict[Position, tuple[tuple[int, ...], ...]]


MATCHER_CAP = 256


def _args_under(sig: Signature, decl: OperatorDecl, s: Term) -> list[Term]:
    if s.kind == APP and s.op == decl.name and len(s.args) >= 2:
        return list(s.args)
    if decl.identity is not None and s.kind == APP and s.op == decl.identity:
        return []
    return [s]


def _group_term(sig: Signature, decl: OperatorDecl, parts: list[Term]) -> Term:
    if not parts:
        ident = sig.identity_term(decl)
        if ident is None:
            raise TermError("empty group without identity")
        return ident
    if len(parts) == 1:
        return parts[0]
    return sig._mk(APP, decl.name, tuple(parts), decl.result_sort)


def _deterministic_pattern(sig: Signature, p: Term) -> bool:
    """A pattern subtree matches without backtracking when it contains no
    associative node that would need argument grouping."""
    cached = sig._det_cache.get(id(p))
    if cached is not None:
        return cached
    if p.kind == VAR or p.kind == HOLE or not p.args:
        det = True
    else:
        decl = sig.decl_of(p)
        if decl is not None and decl.assoc and len(p.args) >= 2:
            det = False
        else:
            det = all(_deterministic_pattern(sig, a) for a in p.args)
    sig._det_cache[id(p)] = det
    return det


def _match_det(sig: Signature, p: Term, s: Term, binds: dict) -> bool:
    """Backtracking-free matching of a deterministic pattern; extends binds
    in place and reports success.  binds may be partially extended on
    failure, so callers pass a scratch copy."""
    if p.kind == VAR:
        if p.sort != s.sort:
            return False
        b = binds.get(p.op)
        if b is not None:
            return b is s
        binds[p.op] = s
        return True
    if p.kind == HOLE:
        raise TermError("holes cannot appear in match patterns")
    if s.kind != APP:
        return False
    decl = sig.decl_of(p)
    if decl is None or (decl.assoc and len(p.args) < 2):
        return p is s
    if s.op != p.op or len(s.args) != len(p.args):
        return False
    for pa, sa in zip(p.args, s.args):
        if not _match_det(sig, pa, sa, binds):
            return False
    return True


def match_terms(sig: Signature, pattern: Term, subject: Term,
                cap: int = MATCHER_CAP) -> list[Match]:
    """All matchers of pattern against a ground subject, modulo the
    signature's assoc/comm/identity attributes.  Both sides are
    canonicalized first."""
    pattern = flatten(sig, pattern)
    subject = flatten(sig, subject)
    results: list[Match] = []
    seen: set = set()

    def emit(binds: dict, groups: dict):
        # terms are interned, so identities identify bindings exactly; the
        # deterministic ordering happens once, on the deduplicated results
        key = tuple(sorted((n, id(v)) for n, v in binds.items()))
        if key not in seen:
            seen.add(key)
            results.append(Match(Substitution(binds), dict(groups)))
            if len(results) > cap:
                raise MatchCapExceeded(
                    f"more than {cap} matchers for {pattern.render()}"
                )

    def walk(p: Term, s: Term, ppos: Position, binds: dict, groups: dict,
             k: Callable[[dict, dict], None]):
        if p.kind == APP and p.args and _deterministic_pattern(sig, p):
            # a root operator mismatch is the common case: reject it before
            # copying the binding environment
            if s.kind == APP and s.op == p.op:
                nb = dict(binds)
                if _match_det(sig, p, s, nb):
                    k(nb, groups)
            return
        if p.kind == VAR:
            if p.sort != s.sort:
                return
            b = binds.get(p.op)
            if b is not None:
                if b is s:
                    k(binds, groups)
                return
            nb = dict(binds)
            nb[p.op] = s
            k(nb, groups)
            return
        if p.kind == HOLE:
            raise TermError("holes cannot appear in match patterns")
        if s.kind != APP:
            return
        decl = sig.decl_of(p)
        if decl is None:
            # literal constant
            if p is s:
                k(binds, groups)
            return
        if not decl.assoc:
            if s.op != p.op or len(s.args) != len(p.args):
                return
            # settle backtracking-free arguments up front; only arguments
            # containing associative nodes need the continuation machinery
            det = [_deterministic_pattern(sig, a) for a in p.args]
            if any(det):
                nb = dict(binds)
                for a, sa, d in zip(p.args, s.args, det):
                    if d and not _match_det(sig, a, sa, nb):
                        return
                binds = nb
            rest = [i for i, d in enumerate(det) if not d]

            def seq(j, binds, groups):
                if j == len(rest):
                    k(binds, groups)
                    return
                i = rest[j]
                walk(p.args[i], s.args[i], ppos + (i + 1,), binds, groups,
                     lambda b, g: seq(j + 1, b, g))

            seq(0, binds, groups)
            return

        # associative node
        if len(p.args) < 2:
            if p is s:
                k(binds, groups)
            elif not p.args and decl.identity == p.op:
                return
            return
        subj_args = _args_under(sig, decl, s)
        slots = list(p.args)
        if decl.comm:
            _match_ac(sig, decl, slots, subj_args, ppos, binds, groups, walk, k)
        else:
            _match_assoc(sig, decl, slots, subj_args, ppos, binds, groups, walk, k)

    walk(pattern, subject, (), {}, {}, emit)
    results.sort(key=lambda m: m.sub.key())
    return results


def _match_ac(sig, decl, slots, subj_args, ppos, binds, groups, walk, k):
    n = len(subj_args)
    nonvar = [(i, sl) for i, sl in enumerate(slots) if sl.kind != VAR]
    var_slots = [(i, sl) for i, sl in enumerate(slots) if sl.kind == VAR]

    def assign_nonvar(idx, used, binds, groups, slot_groups):
        if idx == len(nonvar):
            assign_vars(0, used, binds, groups, slot_groups)
            return
        si, sl = nonvar[idx]
        tried: set = set()
        for j in range(n):
            if used[j]:
                continue
            a = subj_args[j]
            if id(a) in tried:
                continue
            tried.add(id(a))
            used2 = list(used)
            used2[j] = True
            sg2 = dict(slot_groups)
            sg2[si] = (j,)
            walk(sl, a, ppos + (si + 1,), binds, groups,
                 lambda b, g, used2=used2, sg2=sg2: assign_nonvar(idx + 1, used2, b, g, sg2))

    def assign_vars(idx, used, binds, groups, slot_groups):
        if idx == len(var_slots):
            if all(used):
                g2 = dict(groups)
                g2[ppos] = tuple(tuple(slot_groups.get(i, ())) for i in range(len(slots)))
                k(binds, g2)
            return
        si, sl = var_slots[idx]
        remaining = [j for j in range(n) if not used[j]]
        b = binds.get(sl.op)
        if b is not None:
            need = _args_under(sig, decl, b)
            pick = _pick_multiset(subj_args, remaining, need)
            if pick is None:
                return
            used2 = list(used)
            for j in pick:
                used2[j] = True
            sg2 = dict(slot_groups)
            sg2[si] = tuple(pick)
            assign_vars(idx + 1, used2, binds, groups, sg2)
            return
        last = idx == len(var_slots) - 1
        if last:
            choices = [tuple(remaining)]
        else:
            choices = list(_submultisets(remaining))
        for pick in choices:
            if not pick and decl.identity is None:
                continue
            parts = [subj_args[j] for j in pick]
            if decl.comm:
                parts.sort(key=_sort_key)
            val = _group_term(sig, decl, parts)
            if sl.sort != val.sort:
                continue
            nb = dict(binds)
            nb[sl.op] = val
            used2 = list(used)
            for j in pick:
                used2[j] = True
            sg2 = dict(slot_groups)
            # record indices in the order of the (sorted) rebuilt value
            sg2[si] = _ordered_indices(subj_args, pick, parts)
            assign_vars(idx + 1, used2, nb, groups, sg2)

    assign_nonvar(0, [False] * n, binds, groups, {})


def _ordered_indices(subj_args, pick, sorted_parts):
    pool = list(pick)
    out = []
    for part in sorted_parts:
        for j in pool:
            if subj_args[j] is part:
                pool.remove(j)
                out.append(j)
                break
    return tuple(out)


def _pick_multiset(subj_args, remaining, need):
    pool = list(remaining)
    out = []
    for x in need:
        for j in pool:
            if subj_args[j] is x:
                pool.remove(j)
                out.append(j)
                break
        else:
            return None
    return out


def _submultisets(indices) -> Iterator[tuple[int, ...]]:
    n = len(indices)
    for mask in range(1 << n):
        yield tuple(indices[i] for i in range(n) if mask >> i & 1)


def _match_assoc(sig, decl, slots, subj_args, ppos, binds, groups, walk, k):
    n = len(subj_args)

    def go(slot_i, start, binds, groups, slot_groups):
        if slot_i == len(slots):
            if start == n:
                g2 = dict(groups)
                g2[ppos] = tuple(tuple(slot_groups.get(i, ())) for i in range(len(slots)))
                k(binds, g2)
            return
        sl = slots[slot_i]
        rest_min = sum(
            0 if (s.kind == VAR and decl.identity is not None) else 1
            for s in slots[slot_i + 1:]
        )
        if sl.kind != VAR:
            if start < n:
                sg2 = dict(slot_groups)
                sg2[slot_i] = (start,)
                walk(sl, subj_args[start], ppos + (slot_i + 1,), binds, groups,
                     lambda b, g: go(slot_i + 1, start + 1, b, g, sg2))
            return
        b = binds.get(sl.op)
        if b is not None:
            need = _args_under(sig, decl, b)
            if start + len(need) > n:
                return
            for off, x in enumerate(need):
                if subj_args[start + off] is not x:
                    return
            sg2 = dict(slot_groups)
            sg2[slot_i] = tuple(range(start, start + len(need)))
            go(slot_i + 1, start + len(need), binds, groups, sg2)
            return
        min_take = 0 if decl.identity is not None else 1
        for take in range(min_take, n - start - rest_min + 1):
            parts = subj_args[start: start + take]
            val = _group_term(sig, decl, list(parts))
            if sl.sort != val.sort:
                continue
            nb = dict(binds)
            nb[sl.op] = val
            sg2 = dict(slot_groups)
            sg2[slot_i] = tuple(range(start, start + take))
            go(slot_i + 1, start + take, nb, groups, sg2)

    go(0, 0, binds, groups, {})


def match_modulo(pattern: Term, subject: Term, sig: Signature,
                 cap: int = MATCHER_CAP) -> set[Substitution]:
    """The complete substitution set with sigma(pattern) AC-equal to subject."""
    return {m.sub for m in match_terms(sig, pattern, subject, cap)}


def ac_equal(sig: Signature, a: Term, b: Term) -> bool:
    return flatten(sig, a) is flatten(sig, b)
