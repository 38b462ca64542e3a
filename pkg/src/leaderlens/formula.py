"""Mini-language for additive model formulas.

Grammar, whitespace-insensitive:

    formula :=  response '~' term ('+' term)*
    term    :=  's' '(' var (',' 'by' '=' var)? (',' 'k' '=' INT)? ')'
             |  're' '(' var ')'
             |  var

``s(x)`` is a penalized smooth, ``s(x, by=f)`` one independent smooth per
level of f, ``re(f)`` a ridge-penalized random effect of a factor, and a
bare name enters as a parametric factor.  Error positions are 1-based
character columns into the original text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import DataError

DEFAULT_K = 10

_TOKEN_RE = re.compile(r"\s*(?:(?P<ident>[A-Za-z_][A-Za-z0-9_.-]*)"
                       r"|(?P<int>\d+)"
                       r"|(?P<punct>[~+(),=]))")


class FormulaSyntaxError(DataError):
    """Unparseable formula text; ``position`` is the 1-based column."""

    def __init__(self, position: int, detail: str):
        super().__init__(f"column {position}: {detail}")
        self.position = position


class DuplicateTerm(DataError):
    pass


@dataclass(frozen=True)
class TermSpec:
    kind: str  # smooth | smooth-by | parametric-factor | random-effect
    variable: str
    by_factor: str | None = None
    k: int = DEFAULT_K

    @property
    def term_id(self) -> str:
        if self.kind == "smooth":
            return f"s({self.variable})"
        if self.kind == "smooth-by":
            return f"s({self.variable},by={self.by_factor})"
        if self.kind == "random-effect":
            return f"re({self.variable})"
        return self.variable


@dataclass(frozen=True)
class Formula:
    response: str
    terms: tuple[TermSpec, ...]
    text: str = ""

    def __post_init__(self) -> None:
        if not self.terms:
            raise FormulaSyntaxError(len(self.text) or 1, "formula needs >= 1 term")
        seen = set()
        for term in self.terms:
            if term.term_id in seen:
                raise DuplicateTerm(f"term {term.term_id} appears twice")
            seen.add(term.term_id)
            if term.variable == self.response or term.by_factor == self.response:
                at = 1
                if "~" in self.text:
                    found = self.text.find(self.response,
                                           self.text.index("~") + 1)
                    at = max(found + 1, 1)
                raise FormulaSyntaxError(
                    at, f"response {self.response!r} reused in term "
                    f"{term.term_id}")


class _Tokens:
    def __init__(self, text: str):
        self.text = text
        self.items: list[tuple[str, str, int]] = []  # (kind, value, 1-based pos)
        pos = 0
        while pos < len(text):
            if text[pos].isspace():
                pos += 1
                continue
            m = _TOKEN_RE.match(text, pos)
            if m is None:
                raise FormulaSyntaxError(
                    pos + 1, f"unexpected character {text[pos]!r}")
            value = m.group(m.lastgroup)
            self.items.append((m.lastgroup, value, m.start(m.lastgroup) + 1))
            pos = m.end()
        self.i = 0

    def peek(self):
        if self.i < len(self.items):
            return self.items[self.i]
        return ("eof", "", len(self.text) + 1)

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, kind: str, value: str | None = None):
        tok = self.next()
        if tok[0] != kind or (value is not None and tok[1] != value):
            want = value if value is not None else kind
            raise FormulaSyntaxError(tok[2], f"expected {want!r}, found {tok[1]!r}")
        return tok


def _parse_smooth_args(toks: _Tokens, start: int) -> tuple[str, str | None, int]:
    toks.expect("punct", "(")
    kind, value, pos = toks.next()
    if kind != "ident":
        raise FormulaSyntaxError(start, "s(...) needs a variable name")
    variable = value
    by_factor = None
    k = DEFAULT_K
    while toks.peek()[:2] == ("punct", ","):
        toks.next()
        key_kind, key, key_pos = toks.next()
        if key_kind != "ident" or key not in ("by", "k"):
            raise FormulaSyntaxError(key_pos, "expected 'by=' or 'k=' argument")
        toks.expect("punct", "=")
        val_kind, val, val_pos = toks.next()
        if key == "by":
            if val_kind != "ident":
                raise FormulaSyntaxError(val_pos, "by= needs a factor name")
            by_factor = val
        else:
            if val_kind != "int":
                raise FormulaSyntaxError(val_pos, "k= needs an integer")
            k = int(val)
            if k < 4:
                raise FormulaSyntaxError(val_pos, f"k must be >= 4, got {k}")
    toks.expect("punct", ")")
    return variable, by_factor, k


def _parse_term(toks: _Tokens) -> TermSpec:
    kind, value, pos = toks.next()
    if kind != "ident":
        raise FormulaSyntaxError(pos, f"expected a term, found {value!r}")
    nxt = toks.peek()
    if value == "s" and nxt[:2] == ("punct", "("):
        variable, by_factor, k = _parse_smooth_args(toks, pos)
        if by_factor is not None:
            return TermSpec("smooth-by", variable, by_factor=by_factor, k=k)
        return TermSpec("smooth", variable, k=k)
    if value == "re" and nxt[:2] == ("punct", "("):
        toks.expect("punct", "(")
        fkind, factor, fpos = toks.next()
        if fkind != "ident":
            raise FormulaSyntaxError(pos, "re(...) needs a factor name")
        toks.expect("punct", ")")
        return TermSpec("random-effect", factor)
    return TermSpec("parametric-factor", value)


def parse_formula(text: str) -> Formula:
    """Parse formula text into a Formula; rejects unknown syntax with the
    1-based column of the offending term."""
    toks = _Tokens(text)
    resp = toks.next()
    if resp[0] != "ident":
        raise FormulaSyntaxError(resp[2], "formula must start with a response name")
    toks.expect("punct", "~")
    terms = [_parse_term(toks)]
    while toks.peek()[:2] == ("punct", "+"):
        toks.next()
        terms.append(_parse_term(toks))
    trailing = toks.peek()
    if trailing[0] != "eof":
        raise FormulaSyntaxError(trailing[2], f"unexpected {trailing[1]!r}")
    return Formula(response=resp[1], terms=tuple(terms), text=text)
