"""Parser for the navigation-model description language.

A model file declares pages (script, continuations, navigation links),
optional state predicates, and one scenario block fixing the browsers, the
database, the entry page and the enabled optional actions:

    page Login {
        script { skip }
        links {
            true -> Index ;
            true -> Access ? [user, pass] ;
        }
    }
    predicate annaOnAdmin { B(bidAnna, _, Admin, _, _, _, _, _, _) }
    scenario {
        entry Index ;
        browser bidAlfred tab tidAlfred sigma { user = "alfred" ; }
        db { "alfred" = "secretAlfred" ; }
        actions { }
        alphabet { "" ; }
    }
"""

from __future__ import annotations

import re
from typing import Optional

from .rewrite import Theory
from .terms import Signature, Term, TermError
from .webapp import (
    PageSpec,
    Scenario,
    WebModelError,
    build_theory,
    qid_term,
    register_pattern_predicate,
    str_term,
    web_signature,
)


class NavParseError(TermError):
    pass


_TOKEN = re.compile(
    r"""\s*(?:
        (?P<comment>\#[^\n]*|//[^\n]*)
      | (?P<string>"[^"]*")
      | (?P<catdot>'\.)
      | (?P<qid>'[A-Za-z0-9_][A-Za-z0-9_\-.]*)
      | (?P<name>[A-Za-z][A-Za-z0-9_\-]*)
      | (?P<nat>\d+)
      | (?P<sym>:=|!=|=>|->|[{}()\[\],;=?_])
    )""",
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            if text[pos:].strip():
                raise NavParseError(f"bad character at offset {pos}: {text[pos]!r}")
            break
        pos = m.end()
        kind = m.lastgroup
        if kind == "comment":
            continue
        out.append((kind, m.group(kind), m.start(kind)))
    return out


class _Parser:
    def __init__(self, text: str, sig: Signature):
        self.text = text
        self.sig = sig
        self.toks = _tokenize(text)
        self.i = 0
        self.pages: list[PageSpec] = []
        self.predicates: list[tuple[str, str]] = []
        self.scenario: Optional[Scenario] = None

    # -- token stream --------------------------------------------------

    def _peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None, -1)

    def _next(self):
        t = self._peek()
        if t[0] is None:
            raise NavParseError("unexpected end of input")
        self.i += 1
        return t

    def _expect(self, value: str) -> str:
        k, v, off = self._next()
        if v != value:
            raise NavParseError(f"expected {value!r}, got {v!r} at offset {off}")
        return v

    def _name(self) -> str:
        k, v, off = self._next()
        if k != "name":
            raise NavParseError(f"expected a name, got {v!r} at offset {off}")
        return v

    def _string(self) -> str:
        k, v, off = self._next()
        if k != "string":
            raise NavParseError(f"expected a string, got {v!r} at offset {off}")
        return v[1:-1]

    def _at(self, value: str) -> bool:
        return self._peek()[1] == value

    def _at_kind(self, kind: str) -> bool:
        return self._peek()[0] == kind

    # -- model ----------------------------------------------------------

    def parse_model(self):
        while self._peek()[0] is not None:
            k, v, off = self._peek()
            if v == "page":
                self._parse_page()
            elif v == "predicate":
                self._parse_predicate()
            elif v == "scenario":
                self._parse_scenario()
            else:
                raise NavParseError(
                    f"expected page, predicate or scenario, got {v!r} at offset {off}")
        if self.scenario is None:
            raise NavParseError("the model declares no scenario block")
        return self.pages, self.scenario, self.predicates

    def _parse_page(self):
        self._expect("page")
        name = self._name()
        self._expect("{")
        script = self.sig.app("skip")
        conts: list[tuple[Term, str]] = []
        links: list[tuple[Term, str, tuple[str, ...]]] = []
        while not self._at("}"):
            section = self._name()
            self._expect("{")
            if section == "script":
                if not self._at("}"):
                    script = self._stmtseq()
                self._expect("}")
            elif section == "continuations":
                while not self._at("}"):
                    cond = self._cond()
                    self._expect("=>")
                    target = self._name()
                    self._expect(";")
                    conts.append((cond, target))
                self._expect("}")
            elif section == "links":
                while not self._at("}"):
                    cond = self._cond()
                    self._expect("->")
                    target = self._name()
                    keys: tuple[str, ...] = ()
                    if self._at("?"):
                        self._next()
                        self._expect("[")
                        ks = []
                        while not self._at("]"):
                            ks.append(self._name())
                            if self._at(","):
                                self._next()
                        self._expect("]")
                        keys = tuple(ks)
                    self._expect(";")
                    links.append((cond, target, keys))
                self._expect("}")
            else:
                raise NavParseError(f"unknown page section {section!r}")
        self._expect("}")
        self.pages.append(PageSpec(name, script, tuple(conts), tuple(links)))

    def _parse_predicate(self):
        self._expect("predicate")
        name = self._name()
        k, v, open_off = self._next()
        if v != "{":
            raise NavParseError(f"expected '{{' after predicate {name}")
        depth = 1
        start = open_off + 1
        end = start
        while depth > 0:
            k, v, off = self._next()
            if v == "{":
                depth += 1
            elif v == "}":
                depth -= 1
                end = off
        self.predicates.append((name, self.text[start:end].strip()))

    def _cond(self) -> Term:
        if self._at("true"):
            self._next()
            return self.sig.app("ctrue")
        self._expect("(")
        k = self._string()
        self._expect("=")
        v = self._string()
        self._expect(")")
        return self.sig.app("ceq", [str_term(self.sig, k), str_term(self.sig, v)])

    # -- scripts ---------------------------------------------------------

    def _stmtseq(self) -> Term:
        parts = [self._stmt()]
        while self._at(";"):
            self._next()
            if self._peek()[1] in ("}", "fi", "else", None):
                break
            parts.append(self._stmt())
        if len(parts) == 1:
            return parts[0]
        return self.sig.app("sq", parts)

    def _stmt(self) -> Term:
        sig = self.sig
        k, v, off = self._peek()
        if v == "skip":
            self._next()
            return sig.app("skip")
        if v in ("setSession", "updateDB"):
            self._next()
            self._expect("(")
            a = self._expr()
            self._expect(",")
            b = self._expr()
            self._expect(")")
            return sig.app(v, [a, b])
        if v == "if":
            self._next()
            self._expect("(")
            t = self._test()
            self._expect(")")
            self._expect("then")
            then = self._stmtseq()
            other = sig.app("skip")
            if self._at("else"):
                self._next()
                other = self._stmtseq()
            self._expect("fi")
            return sig.app("ifte", [t, then, other])
        if k == "qid":
            self._next()
            self._expect(":=")
            return sig.app("asn", [sig.app(v), self._expr()])
        raise NavParseError(f"bad statement start {v!r} at offset {off}")

    def _test(self) -> Term:
        a = self._expr()
        k, v, off = self._next()
        if v == "=":
            return self.sig.app("eq", [a, self._expr()])
        if v == "!=":
            return self.sig.app("neq", [a, self._expr()])
        raise NavParseError(f"expected = or != at offset {off}")

    def _expr(self) -> Term:
        t = self._atom()
        while self._at("'."):
            self._next()
            t = self.sig.app("cat", [t, self._atom()])
        return t

    def _atom(self) -> Term:
        sig = self.sig
        k, v, off = self._next()
        if k == "string":
            return sig.app("s", [str_term(sig, v[1:-1])])
        if k == "qid":
            return sig.app("rd", [sig.app(v)])
        if v == "null":
            return sig.app("null")
        if v in ("getSession", "selectDB"):
            self._expect("(")
            e = self._expr()
            self._expect(")")
            return sig.app(v, [e])
        if v == "getQuery":
            self._expect("(")
            kk, vv, o2 = self._next()
            if kk != "qid":
                raise NavParseError(f"getQuery takes a quoted key, got {vv!r}")
            self._expect(")")
            return sig.app("getQuery", [sig.app(vv)])
        if v == "(":
            e = self._expr()
            self._expect(")")
            return e
        raise NavParseError(f"bad expression {v!r} at offset {off}")

    # -- scenario --------------------------------------------------------

    def _parse_scenario(self):
        if self.scenario is not None:
            raise NavParseError("duplicate scenario block")
        self._expect("scenario")
        self._expect("{")
        entry = None
        browsers: list[tuple[str, str, dict[str, str]]] = []
        db: dict[str, str] = {}
        actions: set[str] = set()
        alphabet: list[str] = [""]
        history_cap = 8
        max_refresh = 3
        while not self._at("}"):
            word = self._name()
            if word == "entry":
                entry = self._name()
                self._expect(";")
            elif word == "browser":
                idb = self._name()
                self._expect("tab")
                idt = self._name()
                sigma: dict[str, str] = {}
                if self._at("sigma"):
                    self._next()
                    self._expect("{")
                    while not self._at("}"):
                        sk = self._name()
                        self._expect("=")
                        sv = self._string()
                        self._expect(";")
                        sigma[sk] = sv
                    self._expect("}")
                if self._at(";"):
                    self._next()
                browsers.append((idb, idt, sigma))
            elif word == "db":
                self._expect("{")
                while not self._at("}"):
                    dk = self._string()
                    self._expect("=")
                    dv = self._string()
                    self._expect(";")
                    db[dk] = dv
                self._expect("}")
            elif word == "actions":
                self._expect("{")
                while not self._at("}"):
                    act = self._name()
                    if act not in ("refresh", "back"):
                        raise NavParseError(f"unknown action {act!r}")
                    actions.add(act)
                    if self._at(";"):
                        self._next()
                self._expect("}")
            elif word == "alphabet":
                self._expect("{")
                vals = []
                while not self._at("}"):
                    vals.append(self._string())
                    if self._at(";") or self._at(","):
                        self._next()
                self._expect("}")
                if vals:
                    alphabet = vals
            elif word == "history":
                history_cap = int(self._next()[1])
                self._expect(";")
            elif word == "max-refresh":
                max_refresh = int(self._next()[1])
                self._expect(";")
            else:
                raise NavParseError(f"unknown scenario item {word!r}")
        self._expect("}")
        if entry is None:
            raise NavParseError("scenario: missing entry page")
        if not browsers:
            raise NavParseError("scenario: no browsers declared")
        self.scenario = Scenario(entry, browsers, db, actions, alphabet,
                                 history_cap, max_refresh)


def parse_model(text: str, sig: Optional[Signature] = None):
    """Parse a model file into (pages, scenario, predicates)."""
    if sig is None:
        sig = web_signature()
    return _Parser(text, sig).parse_model(), sig


def load_model(text: str, name: str = "webapp") -> Theory:
    """Parse a model file and assemble its rewrite theory."""
    sig = web_signature()
    (pages, scenario, predicates), _ = parse_model(text, sig)
    theory = build_theory(pages, scenario, name=name, sig=sig)
    import hashlib

    theory.meta["source_sha"] = hashlib.sha256(text.encode()).hexdigest()[:16]
    for pname, ptext in predicates:
        register_pattern_predicate(theory, pname, ptext)
    return theory


def load_corpus(which: str) -> Theory:
    """Load one of the packaged example models by name (e.g. forum-buggy)."""
    from importlib import resources

    ref = resources.files("webnav") / "corpus" / f"{which}.nav"
    try:
        text = ref.read_text()
    except FileNotFoundError:
        raise WebModelError(f"unknown corpus model {which!r}")
    return load_model(text, name=which)
