"""Filtering patterns and term slices.

A filtering pattern is a term-shaped query whose nodes may be `?` (relevant
wildcard), `_` (irrelevant placeholder) or operator matchers.  An unquoted
operator name that is declared in the signature with the right arity matches
exactly; any other name (and every quoted "name") matches every operator whose
name contains it as a substring.

Matching a pattern against a state yields a term slice (irrelevant subterms
replaced by holes) together with the slicing criterion: the positions of the
relevant symbols.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .terms import (
    APP,
    HOLE,
    ParseError,
    Position,
    Signature,
    Term,
    TermError,
    _TermParser,
    subterm_at,
    tokenize,
)

REL, BLANK, NODE = "?", "_", "op"


@dataclass(frozen=True)
class FilterPattern:
    kind: str  # REL, BLANK or NODE
    name: str = ""
    fragment: bool = False
    args: tuple["FilterPattern", ...] = ()

    def render(self) -> str:
        if self.kind == REL:
            return "?"
        if self.kind == BLANK:
            return "_"
        name = f'"{self.name}"' if self.fragment and self._quoted_needed() else self.name
        if not self.args:
            return name
        return f"{name}({', '.join(a.render() for a in self.args)})"

    def _quoted_needed(self) -> bool:
        return any(c in self.name for c in " ()")

    def has_relevant(self) -> bool:
        return self.kind == REL or any(a.has_relevant() for a in self.args)

    def has_operator(self) -> bool:
        return self.kind == NODE or any(a.has_operator() for a in self.args)


class PatternError(TermError):
    pass


def parse_filter_pattern(text: str, sig: Signature) -> FilterPattern:
    toks = tokenize(text)
    fp, i = _parse_fp(toks, 0, sig)
    if i != len(toks):
        raise ParseError(f"trailing input {toks[i][1]!r}", toks[i][2])
    if not fp.has_relevant() and not fp.has_operator():
        raise PatternError("pattern selects nothing (only `_` placeholders)")
    return fp


def _parse_fp(toks, i, sig):
    if i >= len(toks):
        raise ParseError("unexpected end of pattern")
    kind, val, p = toks[i]
    if kind == "qmark":
        return FilterPattern(REL), i + 1
    if kind == "blank":
        return FilterPattern(BLANK), i + 1
    if kind == "string":
        name, quoted = val[1:-1], True
    elif kind in ("name", "qid"):
        name, quoted = val, False
    else:
        raise ParseError(f"unexpected token {val!r} in pattern", p)
    i += 1
    args: list[FilterPattern] = []
    if i < len(toks) and toks[i][0] == "lpar":
        i += 1
        if toks[i][0] != "rpar":
            while True:
                a, i = _parse_fp(toks, i, sig)
                args.append(a)
                if i < len(toks) and toks[i][0] == "comma":
                    i += 1
                    continue
                break
        if i >= len(toks) or toks[i][0] != "rpar":
            raise ParseError("expected ) in pattern")
        i += 1
    fragment = quoted or sig.find_op(name, len(args)) is None
    return FilterPattern(NODE, name, fragment, tuple(args)), i


# ---------------------------------------------------------------------------
# matching
# ---------------------------------------------------------------------------


def _fp_match(fp: FilterPattern, t: Term) -> Optional[tuple[set, set]]:
    """Match fp against t; returns (kept, relevant) position sets relative to
    t, or None if it does not match."""
    if fp.kind == BLANK:
        return set(), set()
    if fp.kind == REL:
        ps = set(t.positions())
        return ps, ps
    if t.kind != APP:
        return None
    if fp.fragment:
        if fp.name not in t.op:
            return None
    elif fp.name != t.op:
        return None
    if len(fp.args) != len(t.args):
        return None
    kept: set = {()}
    rel: set = set() if fp.args else {()}
    for i, (fa, ta) in enumerate(zip(fp.args, t.args), 1):
        sub = _fp_match(fa, ta)
        if sub is None:
            return None
        sk, sr = sub
        kept |= {(i,) + q for q in sk}
        rel |= {(i,) + q for q in sr}
    return kept, rel


def ancestors_closed(positions: set[Position]) -> set[Position]:
    out: set[Position] = set()
    for p in positions:
        for k in range(len(p) + 1):
            out.add(p[:k])
    return out


def build_slice(sig: Signature, t: Term, keep: set[Position]) -> Term:
    """Keep the (ancestor-closure of the) given positions, erase the rest."""
    closed = ancestors_closed(keep) if keep else set()

    def walk(u: Term, p: Position) -> Term:
        if p not in closed:
            return sig.hole(u.sort)
        if not u.args:
            return u
        args = tuple(walk(a, p + (i,)) for i, a in enumerate(u.args, 1))
        return sig._mk(u.kind, u.op, args, u.sort)

    return walk(t, ())


def filter_match(fp: FilterPattern, subject: Term, sig: Signature
                 ) -> tuple[Term, set[Position]]:
    """Match fp against every subterm of subject.

    Returns the sliced term (matched material kept, the rest holes) and the
    criterion: the positions of the relevant symbols.  Relevance wins over
    overlapping `_` placeholders.
    """
    if not fp.has_relevant() and not fp.has_operator():
        raise PatternError("pattern selects nothing (only `_` placeholders)")
    kept_all: set[Position] = set()
    rel_all: set[Position] = set()
    for p in subject.positions():
        m = _fp_match(fp, subterm_at(subject, p))
        if m is None:
            continue
        sk, sr = m
        kept_all |= {p + q for q in sk}
        rel_all |= {p + q for q in sr}
    slice_term = build_slice(sig, subject, kept_all | rel_all)
    return slice_term, rel_all


def pattern_matches(fp: FilterPattern, subject: Term) -> bool:
    return any(_fp_match(fp, subterm_at(subject, p)) is not None
               for p in subject.positions())


# ---------------------------------------------------------------------------
# sliced-term utilities
# ---------------------------------------------------------------------------


def kept_positions(t: Term) -> set[Position]:
    """All non-hole positions of a sliced term."""
    out = set()

    def walk(u: Term, p: Position):
        if u.kind == HOLE:
            return
        out.add(p)
        for i, a in enumerate(u.args, 1):
            walk(a, p + (i,))

    walk(t, ())
    return out


def render_sliced(t: Term, sig: Signature) -> str:
    """Render a sliced term; contiguous sibling holes under an assoc operator
    collapse into a single `*`."""
    if t.kind == HOLE:
        return "*"
    if not t.args:
        return t.op
    decl = sig.decl_of(t)
    parts: list[str] = []
    if decl is not None and decl.assoc:
        prev_hole = False
        for a in t.args:
            if a.kind == HOLE:
                if prev_hole:
                    continue
                prev_hole = True
            else:
                prev_hole = False
            parts.append(render_sliced(a, sig))
    else:
        parts = [render_sliced(a, sig) for a in t.args]
    return f"{t.op}({', '.join(parts)})"


def parse_sliced(text: str, sig: Signature, expected_sort: str) -> Term:
    """Parse a term that may contain `*` / `•` holes (no canonicalization)."""
    return _TermParser(tokenize(text), sig, allow_holes=True).parse(expected_sort)
