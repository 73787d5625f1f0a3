"""Randomized property tests for the core invariants."""

from hypothesis import given, settings
from hypothesis import strategies as st

from webnav.ltlr import parse_formula
from webnav.patterns import ancestors_closed, build_slice
from webnav.rewrite import Trace, applicable_steps, apply_step
from webnav.slicer import SlicingCriterion, slice_trace
from webnav.terms import Signature, ac_equal, flatten, parse_term, subterm_at


def make_sig() -> Signature:
    s = Signature({"Elt"})
    for n in "abcde":
        s.const(n, "Elt")
    s.op("f", ("Elt", "Elt"), "Elt", assoc=True, comm=True, identity="e")
    s.op("g", ("Elt", "Elt"), "Elt")
    s.op("h", ("Elt",), "Elt")
    s.validate()
    return s


SIG = make_sig()


def term_strategy(depth=3):
    leaf = st.sampled_from("abcde").map(lambda n: SIG.app(n))
    return st.recursive(
        leaf,
        lambda kids: st.one_of(
            st.tuples(kids, kids).map(lambda p: SIG.app("f", list(p))),
            st.tuples(kids, kids).map(lambda p: SIG.app("g", list(p))),
            kids.map(lambda t: SIG.app("h", [t])),
        ),
        max_leaves=12,
    )


@given(term_strategy())
def test_flatten_idempotent(t):
    c = flatten(SIG, t)
    assert flatten(SIG, c) is c


@given(term_strategy())
def test_canonical_form_is_ac_equal_to_source(t):
    assert ac_equal(SIG, t, flatten(SIG, t))


@given(term_strategy())
def test_render_parse_round_trip(t):
    c = flatten(SIG, t)
    assert parse_term(c.render(), SIG) is c


@given(term_strategy(), term_strategy())
def test_ac_equality_iff_same_canonical_form(a, b):
    assert ac_equal(SIG, a, b) == (flatten(SIG, a) is flatten(SIG, b))


@given(term_strategy(), st.data())
def test_slice_symbol_count_bounded(t, data):
    c = flatten(SIG, t)
    allpos = sorted(c.positions())
    kept = set(data.draw(st.sets(st.sampled_from(allpos))))
    sl = build_slice(SIG, c, ancestors_closed(kept) if kept else set())
    assert sl.symbol_count() <= c.symbol_count()
    if kept == set(allpos):
        assert sl is c
    for p in ancestors_closed(set(kept)) if kept else set():
        assert subterm_at(sl, p).op == subterm_at(c, p).op


FORMULAS = st.recursive(
    st.sampled_from(["a", "b"]),
    lambda sub: st.one_of(
        st.tuples(sub).map(lambda x: f"~ ({x[0]})"),
        st.tuples(sub).map(lambda x: f"O ({x[0]})"),
        st.tuples(sub).map(lambda x: f"[] ({x[0]})"),
        st.tuples(sub).map(lambda x: f"<> ({x[0]})"),
        st.tuples(sub, sub).map(lambda x: f"({x[0]}) /\\ ({x[1]})"),
        st.tuples(sub, sub).map(lambda x: f"({x[0]}) U ({x[1]})"),
        st.tuples(sub, sub).map(lambda x: f"({x[0]}) -> ({x[1]})"),
    ),
    max_leaves=8,
)


@given(FORMULAS)
def test_formula_render_parse_round_trip(text):
    f = parse_formula(text)
    assert parse_formula(f.render()) == f


def drive_theory():
    from test_rewrite import make_theory

    return make_theory()


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_slicer_monotone_in_criterion(data):
    th = drive_theory()
    s = parse_term("st(u(p(0), p(1), q(2)))", th.sig)
    states, steps = [s], []
    for _ in range(3):
        opts = applicable_steps(s, th)
        if not opts:
            break
        rule, pos, m = opts[data.draw(st.integers(0, len(opts) - 1))]
        s, inter, stp = apply_step(s, rule, pos, m, th)
        states.extend(inter)
        steps.extend(stp)
    tr = Trace(states, steps, th.content_hash())
    idx = len(tr.states) - 1
    allpos = sorted(tr.states[idx].positions())
    small = frozenset(data.draw(st.sets(st.sampled_from(allpos), max_size=3)))
    extra = frozenset(data.draw(st.sets(st.sampled_from(allpos), max_size=3)))
    a = slice_trace(th, tr, SlicingCriterion(idx, small))
    b = slice_trace(th, tr, SlicingCriterion(idx, small | extra))
    for (_, pa), (_, pb) in zip(a.per_state, b.per_state):
        assert pa <= pb
