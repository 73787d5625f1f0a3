"""The Web-application rewrite theory.

States are terms `state(browsers, messages, server)`:

* a browser `B(idb, idt, page, urls, session, sigma, lm, hist, i)` displays a
  page with its enabled links, the last session received from the server, a
  form-fill map sigma, the last request sent, a navigation history and a
  refresh counter;
* messages travel as a multiset between browsers and the server;
* the server `S(pages, userSessions, db, fifoReq, fifoRes)` owns the page
  definitions (name, script, continuations, navigation links), per-browser
  sessions, the database, and two FIFO queues.

Transitions are the request/response protocol rules ReqIni, ReqFin,
ScriptEval, ResIni, ResFin plus the optional Refresh, ResDrop and Back.
Server-side computation (script evaluation, continuation choice, link
enabling) happens in builtin calls whose dependency records drive precise
backward slicing.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

from .patterns import FilterPattern, parse_filter_pattern, pattern_matches
from .rewrite import Condition, DepRecord, Rule, Theory
from .terms import (
    APP,
    Position,
    Signature,
    Term,
    TermError,
    flatten,
    nat_literal_family,
    qid_literal_family,
    string_literal_family,
    subterm_at,
)


class WebModelError(TermError):
    pass


# ---------------------------------------------------------------------------
# model description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PageSpec:
    """A page: script term, continuations (cond, target) and navigation links
    (cond, target, query keys)."""

    name: str
    script: Term
    continuations: tuple[tuple[Term, str], ...] = ()
    links: tuple[tuple[Term, str, tuple[str, ...]], ...] = ()


@dataclass
class Scenario:
    entry: str
    browsers: list[tuple[str, str, dict[str, str]]]  # (idb, idt, sigma)
    db: dict[str, str] = field(default_factory=dict)
    actions: set[str] = field(default_factory=set)  # subset of refresh/back
    alphabet: list[str] = field(default_factory=lambda: [""])
    history_cap: int = 8
    max_refresh: int = 3


# ---------------------------------------------------------------------------
# signature
# ---------------------------------------------------------------------------

SOUPS = {
    "se": "session-empty",
    "sg": "sigma-empty",
    "qs": "query-empty",
    "ul": "urls-empty",
    "ms": "mes-empty",
    "br": "bra-empty",
    "pm": "pages-empty",
    "cs": "cont-empty",
    "ns": "nav-empty",
    "kl": "keys-empty",
    "uss": "us-empty",
    "dbs": "db-empty",
}


def web_signature() -> Signature:
    sig = Signature({
        "Str", "Qid", "Nat", "Id", "Val", "Tst", "Stm", "Cond", "Keys",
        "Session", "Sigma", "Query", "Urls", "Hist", "Msgs", "Pages",
        "Conts", "Navs", "USs", "DBs", "Q", "Srv", "Brs", "State", "EvalRes",
    })
    sig.add_literal_family(string_literal_family("Str"))
    sig.add_literal_family(qid_literal_family("Qid"))
    sig.add_literal_family(nat_literal_family("Nat"))

    # data soups
    sig.op("sd", ("Str", "Str"), "Session")
    sig.const("session-empty", "Session")
    sig.op("se", ("Session", "Session"), "Session", assoc=True, comm=True,
           identity="session-empty")
    sig.op("fv", ("Qid", "Str"), "Sigma")
    sig.const("sigma-empty", "Sigma")
    sig.op("sg", ("Sigma", "Sigma"), "Sigma", assoc=True, comm=True,
           identity="sigma-empty")
    sig.op("qe", ("Qid", "Str"), "Query")
    sig.const("query-empty", "Query")
    sig.op("qs", ("Query", "Query"), "Query", assoc=True, comm=True,
           identity="query-empty")
    sig.op("url", ("Qid", "Query"), "Urls")
    sig.const("urls-empty", "Urls")
    sig.op("ul", ("Urls", "Urls"), "Urls", assoc=True, comm=True,
           identity="urls-empty")
    sig.op("hb", ("Qid", "Urls"), "Hist")
    sig.const("history-empty", "Hist")
    sig.op("hs", ("Hist", "Hist"), "Hist", assoc=True, identity="history-empty")

    # messages
    sig.op("b2s", ("Id", "Id", "Urls", "Nat"), "Msgs")
    sig.op("s2b", ("Id", "Id", "Qid", "Urls", "Session", "Nat"), "Msgs")
    sig.const("mes-empty", "Msgs")
    sig.op("ms", ("Msgs", "Msgs"), "Msgs", assoc=True, comm=True,
           identity="mes-empty")

    # browsers
    sig.op("B", ("Id", "Id", "Qid", "Urls", "Session", "Sigma", "Msgs",
                 "Hist", "Nat"), "Brs")
    sig.const("bra-empty", "Brs")
    sig.op("br", ("Brs", "Brs"), "Brs", assoc=True, comm=True,
           identity="bra-empty")

    # server
    sig.op("ctrue", (), "Cond")
    sig.op("ceq", ("Str", "Str"), "Cond")
    sig.op("ky", ("Qid",), "Keys")
    sig.const("keys-empty", "Keys")
    sig.op("kl", ("Keys", "Keys"), "Keys", assoc=True, comm=True,
           identity="keys-empty")
    sig.op("cn", ("Cond", "Qid"), "Conts")
    sig.const("cont-empty", "Conts")
    sig.op("cs", ("Conts", "Conts"), "Conts", assoc=True, comm=True,
           identity="cont-empty")
    sig.op("nv", ("Cond", "Qid", "Keys"), "Navs")
    sig.const("nav-empty", "Navs")
    sig.op("ns", ("Navs", "Navs"), "Navs", assoc=True, comm=True,
           identity="nav-empty")
    sig.op("pg", ("Qid", "Stm", "Conts", "Navs"), "Pages")
    sig.const("pages-empty", "Pages")
    sig.op("pm", ("Pages", "Pages"), "Pages", assoc=True, comm=True,
           identity="pages-empty")
    sig.op("us", ("Id", "Session"), "USs")
    sig.const("us-empty", "USs")
    sig.op("uss", ("USs", "USs"), "USs", assoc=True, comm=True,
           identity="us-empty")
    sig.op("dbe", ("Str", "Str"), "DBs")
    sig.const("db-empty", "DBs")
    sig.op("dbs", ("DBs", "DBs"), "DBs", assoc=True, comm=True,
           identity="db-empty")
    sig.op("en", ("Msgs",), "Q")
    sig.const("q-empty", "Q")
    sig.op("fq", ("Q", "Q"), "Q", assoc=True, identity="q-empty")
    sig.op("S", ("Pages", "USs", "DBs", "Q", "Q"), "Srv")
    sig.op("state", ("Brs", "Msgs", "Srv"), "State")

    # scripts
    sig.const("skip", "Stm")
    sig.op("sq", ("Stm", "Stm"), "Stm", assoc=True)
    sig.op("setSession", ("Val", "Val"), "Stm")
    sig.op("updateDB", ("Val", "Val"), "Stm")
    sig.op("asn", ("Qid", "Val"), "Stm")
    sig.op("ifte", ("Tst", "Stm", "Stm"), "Stm")
    sig.op("s", ("Str",), "Val")
    sig.op("rd", ("Qid",), "Val")
    sig.const("null", "Val")
    sig.op("cat", ("Val", "Val"), "Val")
    sig.op("getSession", ("Val",), "Val")
    sig.op("getQuery", ("Qid",), "Val")
    sig.op("selectDB", ("Val",), "Val")
    sig.op("eq", ("Val", "Val"), "Tst")
    sig.op("neq", ("Val", "Val"), "Tst")

    # evaluation builtin operators
    sig.op("er", ("Session", "DBs"), "EvalRes")
    sig.op("evalScript", ("Qid", "Pages", "Session", "DBs", "Query"), "EvalRes",
           ctor=False)
    sig.op("sessOf", ("EvalRes",), "Session", ctor=False)
    sig.op("dbOf", ("EvalRes",), "DBs", ctor=False)
    sig.op("mkResponse", ("Qid", "Pages", "Id", "Id", "Nat", "EvalRes"),
           "Msgs", ctor=False)
    sig.op("fillUrls", ("Urls", "Sigma"), "Urls", ctor=False)
    sig.op("pushH", ("Hist", "Hist"), "Hist", ctor=False)
    sig.op("inc", ("Nat",), "Nat", ctor=False)
    sig.validate()
    return sig


# ---------------------------------------------------------------------------
# little term helpers
# ---------------------------------------------------------------------------


def _lit(t: Term) -> Optional[str]:
    """String literal payload, or None for anything else."""
    if t.kind == APP and not t.args and t.op.startswith('"') and t.op.endswith('"'):
        return t.op[1:-1]
    return None


def _qname(t: Term) -> Optional[str]:
    if t.kind == APP and not t.args and t.op.startswith("'"):
        return t.op[1:]
    return None


def str_term(sig: Signature, s: str) -> Term:
    return sig.app(f'"{s}"')


def qid_term(sig: Signature, name: str) -> Term:
    return sig.app(f"'{name}")


def nat_term(sig: Signature, n: int) -> Term:
    return sig.app(str(n))


def iter_soup(t: Term, op: str, identity: str):
    """Yield (path, leaf) for every element of a (possibly nested,
    non-canonical) soup term."""

    def walk(u: Term, p: Position):
        if u.kind == APP and u.op == op and len(u.args) >= 2:
            for i, a in enumerate(u.args, 1):
                yield from walk(a, p + (i,))
        elif u.kind == APP and u.op == identity and not u.args:
            return
        else:
            yield p, u

    yield from walk(t, ())


def soup_term(sig: Signature, op: str, identity: str, parts: list[Term]) -> Term:
    if not parts:
        return sig.app(identity)
    if len(parts) == 1:
        return parts[0]
    return flatten(sig, sig.app(op, parts))


def session_term(sig: Signature, d: dict[str, str]) -> Term:
    parts = [sig.app("sd", [str_term(sig, k), str_term(sig, v)])
             for k, v in sorted(d.items())]
    return soup_term(sig, "se", "session-empty", parts)


def session_dict(t: Term) -> dict[str, str]:
    out: dict[str, str] = {}
    for _p, leaf in iter_soup(t, "se", "session-empty"):
        if leaf.kind == APP and leaf.op == "sd" and len(leaf.args) == 2:
            k, v = _lit(leaf.args[0]), _lit(leaf.args[1])
            if k is not None and v is not None and k not in out:
                out[k] = v
    return out


def db_term(sig: Signature, d: dict[str, str]) -> Term:
    parts = [sig.app("dbe", [str_term(sig, k), str_term(sig, v)])
             for k, v in sorted(d.items())]
    return soup_term(sig, "dbs", "db-empty", parts)


def db_dict(t: Term) -> dict[str, str]:
    out: dict[str, str] = {}
    for _p, leaf in iter_soup(t, "dbs", "db-empty"):
        if leaf.kind == APP and leaf.op == "dbe" and len(leaf.args) == 2:
            k, v = _lit(leaf.args[0]), _lit(leaf.args[1])
            if k is not None and v is not None and k not in out:
                out[k] = v
    return out


def query_dict(t: Term) -> dict[str, str]:
    out: dict[str, str] = {}
    for _p, leaf in iter_soup(t, "qs", "query-empty"):
        if leaf.kind == APP and leaf.op == "qe" and len(leaf.args) == 2:
            k, v = _qname(leaf.args[0]), _lit(leaf.args[1])
            if k is not None and v is not None and k not in out:
                out[k] = v
    return out


def sigma_dict(t: Term) -> dict[str, str]:
    out: dict[str, str] = {}
    for _p, leaf in iter_soup(t, "sg", "sigma-empty"):
        if leaf.kind == APP and leaf.op == "fv" and len(leaf.args) == 2:
            k, v = _qname(leaf.args[0]), _lit(leaf.args[1])
            if k is not None and v is not None and k not in out:
                out[k] = v
    return out


# ---------------------------------------------------------------------------
# script interpreter
# ---------------------------------------------------------------------------


@dataclass
class ScriptResult:
    session: dict[str, str]
    db: dict[str, str]
    reads: set[tuple[str, str]]  # ("session" | "db" | "query", key)
    writes: set[tuple[str, str]]


def run_script(script: Term, session: dict[str, str], db: dict[str, str],
               query: dict[str, str]) -> ScriptResult:
    """Big-step evaluation; total (malformed fragments behave like skip/null).

    Unset reads yield null; null written to the session or database is stored
    as the empty string.
    """
    sess = dict(session)
    dbd = dict(db)
    env: dict[str, Optional[str]] = {}
    reads: set[tuple[str, str]] = set()
    writes: set[tuple[str, str]] = set()

    def val(t: Term) -> Optional[str]:
        if t.kind != APP:
            return None
        op, args = t.op, t.args
        if op == "s" and len(args) == 1:
            return _lit(args[0])
        if op == "rd" and len(args) == 1:
            n = _qname(args[0])
            return env.get(n) if n is not None else None
        if op == "null":
            return None
        if op == "cat" and len(args) >= 2:
            parts = [val(a) for a in args]
            if all(p is None for p in parts):
                return None
            return "".join(p or "" for p in parts)
        if op == "getSession" and len(args) == 1:
            k = val(args[0])
            if k is None:
                return None
            reads.add(("session", k))
            return sess.get(k)
        if op == "getQuery" and len(args) == 1:
            k = _qname(args[0])
            if k is None:
                return None
            reads.add(("query", k))
            return query.get(k)
        if op == "selectDB" and len(args) == 1:
            k = val(args[0])
            if k is None:
                return None
            reads.add(("db", k))
            return dbd.get(k)
        return None

    def test(t: Term) -> bool:
        if t.kind == APP and t.op == "eq" and len(t.args) == 2:
            return val(t.args[0]) == val(t.args[1])
        if t.kind == APP and t.op == "neq" and len(t.args) == 2:
            return val(t.args[0]) != val(t.args[1])
        return False

    def stmt(t: Term):
        if t.kind != APP:
            return
        op, args = t.op, t.args
        if op == "sq":
            for a in args:
                stmt(a)
        elif op == "asn" and len(args) == 2:
            n = _qname(args[0])
            if n is not None:
                env[n] = val(args[1])
        elif op == "setSession" and len(args) == 2:
            k = val(args[0])
            if k is not None:
                sess[k] = val(args[1]) or ""
                writes.add(("session", k))
        elif op == "updateDB" and len(args) == 2:
            k = val(args[0])
            if k is not None:
                dbd[k] = val(args[1]) or ""
                writes.add(("db", k))
        elif op == "ifte" and len(args) == 3:
            stmt(args[1] if test(args[0]) else args[2])

    stmt(script)
    return ScriptResult(sess, dbd, reads, writes)


def eval_cond(cond: Term, session: dict[str, str]) -> bool:
    if cond.kind == APP and cond.op == "ctrue":
        return True
    if cond.kind == APP and cond.op == "ceq" and len(cond.args) == 2:
        k, v = _lit(cond.args[0]), _lit(cond.args[1])
        return k is not None and session.get(k) == v
    return False


# ---------------------------------------------------------------------------
# builtins
# ---------------------------------------------------------------------------


def _entry_paths(container: Term, soup_op: str, identity: str, entry_op: str,
                 key_index: int, key_of) -> dict[str, Position]:
    """Map entry key -> path of the entry inside the (literal) container."""
    out: dict[str, Position] = {}
    for p, leaf in iter_soup(container, soup_op, identity):
        if leaf.kind == APP and leaf.op == entry_op and len(leaf.args) > key_index:
            k = key_of(leaf.args[key_index])
            if k is not None and k not in out:
                out[k] = p
    return out


def _bi_eval_script(theory: Theory, args: tuple[Term, ...]
                    ) -> tuple[Term, Optional[DepRecord]]:
    sig = theory.sig
    degenerate = sig.app("er", [sig.app("session-empty"), sig.app("db-empty")])
    if len(args) != 5:
        return degenerate, None
    pn, pmt, se, db, qy = args
    name = _qname(pn)
    found = _page_components(pmt, name) if name is not None else None
    if found is None:
        return degenerate, None
    pg_path, page = found
    scr = page.args[1]
    res = run_script(scr, session_dict(se), db_dict(db), query_dict(qy))
    out = sig.app("er", [session_term(sig, res.session), db_term(sig, res.db)])

    # inputs feeding the result: the page name and its script, the read
    # entries, and the whole query (key absence is significant); a read key
    # that is absent pulls in the whole container so that absence itself is
    # preserved
    sess_paths = _entry_paths(se, "se", "session-empty", "sd", 0, _lit)
    db_paths = _entry_paths(db, "dbs", "db-empty", "dbe", 0, _lit)
    ins: list[Position] = [(1,), (2,) + pg_path + (1,), (2,) + pg_path + (2,),
                           (5,)]
    whole_sess = whole_db = False
    for kind, key in res.reads:
        if kind == "session":
            p = sess_paths.get(key)
            if p is None:
                whole_sess = True
            else:
                ins.append((3,) + p)
        elif kind == "db":
            p = db_paths.get(key)
            if p is None:
                whole_db = True
            else:
                ins.append((4,) + p)
    if whole_sess:
        ins.append((3,))
    if whole_db:
        ins.append((4,))
    deps: list[tuple[Position, tuple[Position, ...]]] = [
        ((1,), tuple(ins)),
        # the output db copies the input db on top of the computed writes
        ((2,), tuple(ins) + ((4,),)),
    ]
    return flatten(sig, out), tuple(deps)


def _bi_sess_of(theory: Theory, args):
    sig = theory.sig
    if args and args[0].kind == APP and args[0].op == "er" and len(args[0].args) == 2:
        return args[0].args[0], (((), ((1, 1),)),)
    return sig.app("session-empty"), None


def _bi_db_of(theory: Theory, args):
    sig = theory.sig
    if args and args[0].kind == APP and args[0].op == "er" and len(args[0].args) == 2:
        return args[0].args[1], (((), ((1, 2),)),)
    return sig.app("db-empty"), None


def _page_components(pm: Term, name: str) -> Optional[tuple[Position, Term]]:
    for p, leaf in iter_soup(pm, "pm", "pages-empty"):
        if (leaf.kind == APP and leaf.op == "pg" and len(leaf.args) == 4
                and _qname(leaf.args[0]) == name):
            return p, leaf
    return None


def _enabled_urls(sig: Signature, page: Term, sess: dict[str, str]) -> Term:
    """Navigation links of a page whose conditions hold: url terms with
    query templates (every key listed with an empty default)."""
    urls = []
    for _p, nv in iter_soup(page.args[3], "ns", "nav-empty"):
        if nv.kind != APP or nv.op != "nv" or len(nv.args) != 3:
            continue
        if not eval_cond(nv.args[0], sess):
            continue
        target = nv.args[1]
        qparts = []
        for _q, ky in iter_soup(nv.args[2], "kl", "keys-empty"):
            if ky.kind == APP and ky.op == "ky" and len(ky.args) == 1:
                qparts.append(sig.app("qe", [ky.args[0], str_term(sig, "")]))
        urls.append(sig.app("url", [target,
                                    soup_term(sig, "qs", "query-empty", qparts)]))
    return soup_term(sig, "ul", "urls-empty", urls)


def _bi_mk_response(theory: Theory, args):
    """Continuation choice plus link enabling: builds the s2b response."""
    sig = theory.sig
    bad = sig.app("s2b", [args[2], args[3], qid_term(sig, "none"),
                          sig.app("urls-empty"), sig.app("session-empty"),
                          args[4]]) if len(args) == 6 else None
    if len(args) != 6:
        return sig.app("mes-empty"), None
    pn, pmt, ib, it, ack, ev = args
    name = _qname(pn)
    if (name is None or ev.kind != APP or ev.op != "er" or len(ev.args) != 2):
        return bad, None
    s_new = ev.args[0]
    sess = session_dict(s_new)
    req = _page_components(pmt, name)
    if req is None:
        return bad, None
    req_path, req_page = req
    # continuation choice on the post-script session; with no satisfied
    # condition (or no continuations at all) the requested page is returned
    target_name = name
    conts = sorted(
        (c for _p, c in iter_soup(req_page.args[2], "cs", "cont-empty")
         if c.kind == APP and c.op == "cn" and len(c.args) == 2),
        key=lambda c: c.render(),
    )
    for c in conts:
        if eval_cond(c.args[0], sess):
            t = _qname(c.args[1])
            if t is not None:
                target_name = t
            break
    tgt = _page_components(pmt, target_name)
    if tgt is None:
        return bad, None
    tgt_path, tgt_page = tgt
    urls = _enabled_urls(sig, tgt_page, sess)
    out = flatten(sig, sig.app(
        "s2b", [ib, it, qid_term(sig, target_name), urls, s_new, ack]))
    deps: list[tuple[Position, tuple[Position, ...]]] = [
        ((1,), ((3,),)),
        ((2,), ((4,),)),
        ((3,), ((1,), (2,) + req_path + (1,), (2,) + req_path + (3,), (6, 1))),
        # the urls depend on the target page's links, and transitively on
        # everything the target choice itself was computed from
        ((4,), ((1,), (2,) + req_path + (1,), (2,) + req_path + (3,),
                (2,) + tgt_path + (1,), (2,) + tgt_path + (4,), (6, 1))),
        ((5,), ((6, 1),)),
        ((6,), ((5,),)),
    ]
    return out, tuple(deps)


def _bi_fill_urls(theory: Theory, args):
    """Substitute the browser's form-fill values into url query templates."""
    sig = theory.sig
    if len(args) != 2:
        return sig.app("urls-empty"), None
    ult, sgt = args
    sigma = sigma_dict(sgt)
    urls = []
    for _p, u in iter_soup(ult, "ul", "urls-empty"):
        if u.kind == APP and u.op == "url" and len(u.args) == 2:
            qparts = []
            for _q, qe in iter_soup(u.args[1], "qs", "query-empty"):
                if qe.kind == APP and qe.op == "qe" and len(qe.args) == 2:
                    k = _qname(qe.args[0])
                    if k is not None and k in sigma:
                        qe = sig.app("qe", [qe.args[0], str_term(sig, sigma[k])])
                    qparts.append(qe)
            urls.append(sig.app(
                "url", [u.args[0], soup_term(sig, "qs", "query-empty", qparts)]))
        else:
            urls.append(u)
    out = flatten(sig, soup_term(sig, "ul", "urls-empty", urls))
    return out, (((), ((1,), (2,))),)


def _bi_push_hist(theory: Theory, args):
    sig = theory.sig
    if len(args) != 2:
        return sig.app("history-empty"), None
    h, e = args
    cap = int(theory.meta.get("history_cap", 8))
    entries = [leaf for _p, leaf in iter_soup(h, "hs", "history-empty")]
    entries.append(e)
    entries = entries[-cap:]
    out = sig.app("history-empty") if not entries else (
        entries[0] if len(entries) == 1 else sig.app("hs", entries))
    return flatten(sig, out), (((), ((1,), (2,))),)


def _bi_inc(theory: Theory, args):
    sig = theory.sig
    if len(args) == 1 and args[0].op.isdigit():
        return nat_term(sig, int(args[0].op) + 1), (((), ((1,),)),)
    return nat_term(sig, 0), None


# boolean tests -------------------------------------------------------------


def _mentions_browser(t: Term, ib: Term) -> bool:
    stack = [t]
    while stack:
        t = stack.pop()
        if t.op in ("b2s", "s2b") and t.args and t.args[0] is ib:
            return True
        stack.extend(t.args)
    return False


def _test_no_pending(theory: Theory, args) -> bool:
    """No request or response of this browser is anywhere in flight."""
    if len(args) != 3:
        return False
    ib, msgs, srv = args
    if _mentions_browser(msgs, ib):
        return False
    if srv.kind == APP and srv.op == "S" and len(srv.args) == 5:
        return not (_mentions_browser(srv.args[3], ib)
                    or _mentions_browser(srv.args[4], ib))
    return True


def _test_eq(theory: Theory, args) -> bool:
    return len(args) == 2 and args[0] is args[1]


def _test_lt_nat(theory: Theory, args) -> bool:
    if len(args) != 2 or not (args[0].op.isdigit() and args[1].op.isdigit()):
        return False
    return int(args[0].op) < int(args[1].op)


def _test_lt_cap(theory: Theory, args) -> bool:
    cap = int(theory.meta.get("max_refresh", 3))
    return len(args) == 1 and args[0].op.isdigit() and int(args[0].op) < cap


# ---------------------------------------------------------------------------
# the protocol rules
# ---------------------------------------------------------------------------

# cheap per-rule prefilters so exploration does not attempt full matching of
# rules that obviously cannot fire on a given state


def _g_msg(op: str):
    def g(state: Term) -> bool:
        if state.kind != APP or state.op != "state":
            return True
        m = state.args[1]
        if m.op == op:
            return True
        return m.op == "ms" and any(a.op == op for a in m.args)
    return g


def _g_queue(idx: int):
    def g(state: Term) -> bool:
        if state.kind != APP or state.op != "state" or state.args[2].op != "S":
            return True
        return state.args[2].args[idx].op != "q-empty"
    return g


def _g_browser_field(idx: int, empty: str):
    def g(state: Term) -> bool:
        return any(b.args[idx].op != empty for b in iter_browsers(state)) \
            or not (state.kind == APP and state.op == "state")
    return g


def _protocol_rules(sig: Signature, actions: set[str]) -> list[Rule]:
    v = sig.var
    Ib, It = v("Ib", "Id"), v("It", "Id")
    PN, P2 = v("PN", "Qid"), v("P2", "Qid")
    UL, U2 = v("UL", "Urls"), v("U2", "Urls")
    UQ = v("UQ", "Urls")
    SE, S2 = v("SE", "Session"), v("S2", "Session")
    SG = v("SG", "Sigma")
    LM, M = v("LM", "Msgs"), v("M", "Msgs")
    H = v("H", "Hist")
    I, A = v("I", "Nat"), v("A", "Nat")
    BS, MS = v("BS", "Brs"), v("MS", "Msgs")
    BR = v("BR", "Brs")
    SV = v("SV", "Srv")
    W = v("W", "Pages")
    Scr = v("Scr", "Stm")
    Cont, Nav = v("Cont", "Conts"), v("Nav", "Navs")
    USr = v("USr", "USs")
    DB = v("DB", "DBs")
    FQ, FR = v("FQ", "Q"), v("FR", "Q")
    QY = v("QY", "Query")

    def browser(page, urls, sess, lm, hist, i):
        return sig.app("B", [Ib, It, page, urls, sess, SG, lm, hist, i])

    def st(brs, msgs, srv):
        return sig.app("state", [brs, msgs, srv])

    rules = []

    # a browser clicks one of its displayed links
    clicked = sig.app("url", [P2, QY])
    req = sig.app("b2s", [Ib, It, clicked, I])
    rules.append(Rule(
        "ReqIni",
        st(sig.app("br", [browser(PN, sig.app("ul", [clicked, UL]), SE, LM, H, I),
                          BS]), MS, SV),
        st(sig.app("br", [browser(PN, sig.app("ul", [clicked, UL]), SE, req, H, I),
                          BS]),
           sig.app("ms", [req, MS]), SV),
        conditions=(Condition("no_pending", (Ib, MS, SV), tracked=False),),
        guard=_g_browser_field(3, "urls-empty"),
    ))

    # the server admits a request into its FIFO queue
    reqm = sig.app("b2s", [Ib, It, UQ, A])
    rules.append(Rule(
        "ReqFin",
        st(BR, sig.app("ms", [reqm, MS]),
           sig.app("S", [W, USr, DB, FQ, FR])),
        st(BR, MS,
           sig.app("S", [W, USr, DB, sig.app("fq", [FQ, sig.app("en", [reqm])]),
                         FR])),
        guard=_g_msg("b2s"),
    ))

    # the server evaluates the requested page's script, picks a continuation
    # and queues the response; page lookup happens inside the builtins (the
    # page map is constant, so matching it entry by entry would be wasted
    # work on every state)
    request = sig.app("b2s", [Ib, It, sig.app("url", [PN, QY]), A])
    ev = sig.app("evalScript", [PN, W, SE, DB, QY])
    rules.append(Rule(
        "ScriptEval",
        st(BR, MS,
           sig.app("S", [W,
                         sig.app("uss", [sig.app("us", [Ib, SE]), USr]),
                         DB,
                         sig.app("fq", [sig.app("en", [request]), FQ]),
                         FR])),
        st(BR, MS,
           sig.app("S", [W,
                         sig.app("uss", [sig.app("us", [Ib, sig.app("sessOf", [ev])]),
                                         USr]),
                         sig.app("dbOf", [ev]),
                         FQ,
                         sig.app("fq", [FR, sig.app("en", [
                             sig.app("mkResponse", [PN, W, Ib, It, A, ev])])])])),
        guard=_g_queue(3),
    ))

    # the server emits the response at the head of its output queue
    rules.append(Rule(
        "ResIni",
        st(BR, MS, sig.app("S", [W, USr, DB, FQ,
                                 sig.app("fq", [sig.app("en", [M]), FR])])),
        st(BR, sig.app("ms", [M, MS]), sig.app("S", [W, USr, DB, FQ, FR])),
        guard=_g_queue(4),
    ))

    # a browser displays a response matching its refresh counter
    resp = sig.app("s2b", [Ib, It, P2, U2, S2, A])
    new_hist = sig.app("pushH", [H, sig.app("hb", [PN, UL])]) if "back" in actions else H
    rules.append(Rule(
        "ResFin",
        st(sig.app("br", [browser(PN, UL, SE, LM, H, I), BS]),
           sig.app("ms", [resp, MS]), SV),
        st(sig.app("br", [browser(P2, sig.app("fillUrls", [U2, SG]), S2, LM,
                                  new_hist, I), BS]),
           MS, SV),
        conditions=(Condition("same_nat", (A, I)),),
        guard=_g_msg("s2b"),
    ))

    if "refresh" in actions:
        # stale responses (sent for an older refresh counter) are discarded
        rules.append(Rule(
            "ResDrop",
            st(sig.app("br", [browser(PN, UL, SE, LM, H, I), BS]),
               sig.app("ms", [resp, MS]), SV),
            st(sig.app("br", [browser(PN, UL, SE, LM, H, I), BS]), MS, SV),
            conditions=(Condition("lt_nat", (A, I)),),
            guard=_g_msg("s2b"),
        ))
        lastreq = sig.app("b2s", [Ib, It, UQ, A])
        re_req = sig.app("b2s", [Ib, It, UQ, sig.app("inc", [I])])
        rules.append(Rule(
            "Refresh",
            st(sig.app("br", [browser(PN, UL, SE, lastreq, H, I), BS]), MS, SV),
            st(sig.app("br", [sig.app("B", [Ib, It, PN, UL, SE, SG, re_req, H,
                                            sig.app("inc", [I])]), BS]),
               sig.app("ms", [re_req, MS]), SV),
            conditions=(Condition("no_pending", (Ib, MS, SV), tracked=False),
                        Condition("lt_refresh_cap", (I,), tracked=False)),
        ))

    if "back" in actions:
        rules.append(Rule(
            "Back",
            st(sig.app("br", [browser(PN, UL, SE, LM,
                                      sig.app("hs", [H, sig.app("hb", [P2, U2])]),
                                      I), BS]), MS, SV),
            st(sig.app("br", [browser(P2, U2, SE, LM, H, I), BS]), MS, SV),
            guard=_g_browser_field(7, "history-empty"),
        ))

    return rules


# ---------------------------------------------------------------------------
# theory assembly
# ---------------------------------------------------------------------------


def page_term(sig: Signature, spec: PageSpec) -> Term:
    conts = [sig.app("cn", [c, qid_term(sig, t)]) for c, t in spec.continuations]
    navs = []
    for c, t, keys in spec.links:
        kl = soup_term(sig, "kl", "keys-empty",
                       [sig.app("ky", [qid_term(sig, k)]) for k in keys])
        navs.append(sig.app("nv", [c, qid_term(sig, t), kl]))
    return sig.app("pg", [
        qid_term(sig, spec.name), spec.script,
        soup_term(sig, "cs", "cont-empty", conts),
        soup_term(sig, "ns", "nav-empty", navs),
    ])


def _validate_pages(pages: list[PageSpec], scenario: Scenario):
    if not pages:
        raise WebModelError("no entry page: the model declares no pages")
    names = set()
    for p in pages:
        if p.name in names:
            raise WebModelError(f"duplicate page {p.name}")
        names.add(p.name)
    for p in pages:
        for _c, t in p.continuations:
            if t not in names:
                raise WebModelError(f"page {p.name}: unknown continuation target {t}")
        conds = [c.render() for c, _t in p.continuations]
        if len(conds) != len(set(conds)):
            raise WebModelError(f"page {p.name}: conflicting continuations")
        for _c, t, _k in p.links:
            if t not in names:
                raise WebModelError(f"page {p.name}: unknown link target {t}")
    if scenario.entry not in names:
        raise WebModelError(f"no entry page: {scenario.entry} is not declared")


def build_theory(pages: list[PageSpec], scenario: Scenario,
                 name: str = "webapp", sig: Optional[Signature] = None) -> Theory:
    """Assemble the rewrite theory for a navigation model plus scenario."""
    _validate_pages(pages, scenario)
    if sig is None:
        sig = web_signature()
    for idb, idt, _sg in scenario.browsers:
        for ident in (idb, idt):
            if sig.find_op(ident, 0) is None:
                sig.const(ident, "Id")
    th = Theory(sig, "State", name=name)
    th.meta["history_cap"] = scenario.history_cap
    th.meta["max_refresh"] = scenario.max_refresh
    th.meta["actions"] = ",".join(sorted(scenario.actions))
    th.meta["entry"] = scenario.entry

    th.add_builtin("evalScript", _bi_eval_script)
    th.add_builtin("sessOf", _bi_sess_of)
    th.add_builtin("dbOf", _bi_db_of)
    th.add_builtin("mkResponse", _bi_mk_response)
    th.add_builtin("fillUrls", _bi_fill_urls)
    th.add_builtin("pushH", _bi_push_hist)
    th.add_builtin("inc", _bi_inc)
    th.add_test("no_pending", _test_no_pending)
    th.add_test("same_nat", _test_eq)
    th.add_test("lt_nat", _test_lt_nat)
    th.add_test("lt_refresh_cap", _test_lt_cap)

    for r in _protocol_rules(sig, scenario.actions):
        th.add_rule(r)

    pages_term = soup_term(sig, "pm", "pages-empty",
                           [page_term(sig, p) for p in pages])
    th.meta["pages_sha"] = hashlib.sha256(
        flatten(sig, pages_term).render().encode()).hexdigest()[:16]
    th.pages = {p.name: p for p in pages}
    th.pages_term = flatten(sig, pages_term)
    th.scenario = scenario
    return th


def initial_state(theory: Theory) -> Term:
    """Browsers poised on their first request to the entry page; the requests
    are already on the wire."""
    sig = theory.sig
    sc: Scenario = theory.scenario
    browsers = []
    msgs = []
    usents = []
    for idb, idt, sgm in sc.browsers:
        ib, it = sig.app(idb), sig.app(idt)
        req = sig.app("b2s", [ib, it,
                              sig.app("url", [qid_term(sig, sc.entry),
                                              sig.app("query-empty")]),
                              nat_term(sig, 1)])
        sgt = soup_term(sig, "sg", "sigma-empty",
                        [sig.app("fv", [qid_term(sig, k), str_term(sig, v)])
                         for k, v in sorted(sgm.items())])
        browsers.append(sig.app("B", [
            ib, it, qid_term(sig, "Start"), sig.app("urls-empty"),
            sig.app("session-empty"), sgt, req, sig.app("history-empty"),
            nat_term(sig, 1)]))
        msgs.append(req)
        usents.append(sig.app("us", [ib, sig.app("session-empty")]))
    server = sig.app("S", [
        theory.pages_term,
        soup_term(sig, "uss", "us-empty", usents),
        db_term(sig, sc.db),
        sig.app("q-empty"), sig.app("q-empty"),
    ])
    return flatten(sig, sig.app("state", [
        soup_term(sig, "br", "bra-empty", browsers),
        soup_term(sig, "ms", "mes-empty", msgs),
        server,
    ]))


# ---------------------------------------------------------------------------
# state predicates
# ---------------------------------------------------------------------------


def iter_browsers(state: Term):
    if state.kind != APP or state.op != "state" or len(state.args) != 3:
        return
    for _p, b in iter_soup(state.args[0], "br", "bra-empty"):
        if b.kind == APP and b.op == "B" and len(b.args) == 9:
            yield b


def cur_page(state: Term, idb: str, page: str) -> bool:
    for b in iter_browsers(state):
        if b.args[0].op == idb and _qname(b.args[2]) == page:
            return True
    return False


def eval_predicate(theory: Theory, name: str, args: tuple[str, ...],
                   state: Term) -> bool:
    """State predicates: the built-in curPage(idb, page) plus user-registered
    pattern predicates (a state pattern with `_` placeholders)."""
    if name == "curPage":
        if len(args) != 2:
            raise WebModelError("curPage takes (browser id, page)")
        return cur_page(state, args[0], args[1])
    fp = theory.predicates.get(name)
    if fp is None:
        raise WebModelError(f"unknown predicate {name}")
    if args:
        raise WebModelError(f"predicate {name} takes no arguments")
    return pattern_matches(fp, state)


def register_pattern_predicate(theory: Theory, name: str, text: str):
    fp = parse_filter_pattern(text, theory.sig)
    theory.predicates[name] = fp
    theory.meta[f"pred:{name}"] = fp.render()
    return fp
