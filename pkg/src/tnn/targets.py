"""Built-in target functions and a small arithmetic expression language.

Expressions use ``+ - * / ^``, unary minus, numbers, ``pi``, ``exp``,
``sin``, ``cos``, coordinates ``x[k]`` (1-based) and reductions over all
dimensions, ``sum(...)`` and ``prod(...)``, inside which ``x[i]`` is the
coordinate of the current dimension. For example ``exp(sum(x[i]^2))``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import erfi

from .errors import InvalidArgumentError, ParseError
from .quad import BoxDomain, as_domain


@dataclass(frozen=True)
class Target:
    name: str
    domain: BoxDomain
    fn: Callable[[np.ndarray], np.ndarray]
    reference_integral: float | None = None

    @property
    def dim(self) -> int:
        return self.domain.dim

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.fn(X)


# --- built-ins -------------------------------------------------------------


def exp_sq_integral_1d() -> float:
    """``int_0^1 exp(x^2) dx = sqrt(pi)/2 * erfi(1)``."""
    return 0.5 * math.sqrt(math.pi) * float(erfi(1.0))


def _exp_sum_sq(d: int) -> Target:
    return Target(
        f"exp_sum_sq_{d}d",
        BoxDomain.cube(0.0, 1.0, d),
        lambda X: np.exp(np.sum(np.asarray(X) ** 2, axis=1)),
        exp_sq_integral_1d() ** d,
    )


def _exp_prod_1mx2(d: int) -> Target:
    return Target(
        "exp_prod_1mx2",
        BoxDomain.cube(-1.0, 1.0, d),
        lambda X: np.exp(np.prod(1.0 - np.asarray(X) ** 2, axis=1)),
    )


BUILTINS: dict[str, Callable[[int], Target]] = {
    "exp_sum_sq": _exp_sum_sq,
    "exp_prod_1mx2": _exp_prod_1mx2,
}

_SUFFIX = re.compile(r"^(?P<base>[a-z0-9_]+?)_(?P<d>\d+)d$")


def builtin_target(name: str, dim: int | None = None) -> Target:
    """Look up a built-in; a ``_<d>d`` suffix fixes the dimension (e.g. ``exp_sum_sq_8d``)."""
    base = name
    m = _SUFFIX.match(name)
    if name not in BUILTINS and m and m.group("base") in BUILTINS:
        base, suffix_dim = m.group("base"), int(m.group("d"))
        if dim is not None and dim != suffix_dim:
            raise InvalidArgumentError(f"target {name!r} is {suffix_dim}-dimensional but dim={dim} was requested")
        dim = suffix_dim
    if base not in BUILTINS:
        raise InvalidArgumentError(f"unknown target {name!r}; built-ins are {sorted(BUILTINS)}")
    if dim is None or dim < 1:
        raise InvalidArgumentError(f"target {name!r} needs a positive dimension")
    return BUILTINS[base](int(dim))


# --- expression language ---------------------------------------------------

_TOKEN = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<num>(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()\[\],])"
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(src: str) -> list[_Tok]:
    toks, pos, line, line_start = [], 0, 1, 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if not m:
            raise ParseError(f"unexpected character {src[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line, line_start = line + 1, m.end()
        elif kind != "ws":
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("end", "", line, pos - line_start + 1))
    return toks


_FUNCS = {"exp": np.exp, "sin": np.sin, "cos": np.cos}
_REDUCE = {"sum": np.add, "prod": np.multiply}

# AST nodes are tuples: ("num", v) ("coord", k) ("bound",) ("neg", a) ("bin", op, a, b)
# ("call", f, a) ("reduce", kind, a)


class _Parser:
    def __init__(self, src: str):
        self.toks = _tokenize(src)
        self.i = 0
        self.in_reduce = False
        self.max_coord = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.tok
        raise ParseError(msg, tok.line, tok.col)

    def expect(self, text: str) -> _Tok:
        if self.tok.text != text:
            found = "end of input" if self.tok.kind == "end" else repr(self.tok.text)
            self.error(f"expected {text!r}, found {found}")
        tok = self.tok
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        if self.tok.kind != "end":
            self.error(f"unexpected {self.tok.text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.tok.text in ("+", "-"):
            op = self.tok.text
            self.i += 1
            node = ("bin", op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.tok.text
            self.i += 1
            node = ("bin", op, node, self.unary())
        return node

    def unary(self):
        if self.tok.text == "-":
            self.i += 1
            return ("neg", self.unary())
        if self.tok.text == "+":
            self.i += 1
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok.text == "^":
            self.i += 1
            return ("bin", "^", base, self.unary())
        return base

    def atom(self):
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return ("num", float(tok.text))
        if tok.text == "(":
            self.i += 1
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "name":
            self.i += 1
            if tok.text == "pi":
                return ("num", math.pi)
            if tok.text == "x":
                return self.coordinate()
            if tok.text in _FUNCS or tok.text in _REDUCE:
                self.expect("(")
                if tok.text in _REDUCE:
                    if self.in_reduce:
                        self.error("nested sum/prod is not supported", tok)
                    self.in_reduce = True
                    arg = self.expr()
                    self.in_reduce = False
                    node = ("reduce", tok.text, arg)
                else:
                    node = ("call", tok.text, self.expr())
                self.expect(")")
                return node
            self.error(f"unknown name {tok.text!r}", tok)
        found = "end of input" if tok.kind == "end" else repr(tok.text)
        self.error(f"expected a number, x[...], a function or '(', found {found}")

    def coordinate(self):
        self.expect("[")
        tok = self.tok
        if tok.kind == "name" and tok.text == "i":
            if not self.in_reduce:
                self.error("x[i] is only allowed inside sum(...) or prod(...)", tok)
            self.i += 1
            node = ("bound",)
        elif tok.kind == "num" and re.fullmatch(r"\d+", tok.text):
            k = int(tok.text)
            if k < 1:
                self.error("coordinate indices start at 1", tok)
            self.i += 1
            self.max_coord = max(self.max_coord, k)
            node = ("coord", k - 1)
        else:
            self.error("expected a positive integer index or i inside x[...]", tok)
        self.expect("]")
        return node


def _evaluate(node, X: np.ndarray, bound: int | None):
    kind = node[0]
    if kind == "num":
        return np.full(X.shape[0], node[1])
    if kind == "coord":
        return X[:, node[1]]
    if kind == "bound":
        return X[:, bound]
    if kind == "neg":
        return -_evaluate(node[1], X, bound)
    if kind == "call":
        return _FUNCS[node[1]](_evaluate(node[2], X, bound))
    if kind == "reduce":
        ufunc = _REDUCE[node[1]]
        acc = _evaluate(node[2], X, 0)
        for k in range(1, X.shape[1]):
            acc = ufunc(acc, _evaluate(node[2], X, k))
        return acc
    op, a, b = node[1], _evaluate(node[2], X, bound), _evaluate(node[3], X, bound)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return a / b
    return np.power(a, b)


@dataclass(frozen=True)
class Expression:
    source: str
    ast: tuple
    min_dim: int

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] < self.min_dim:
            raise InvalidArgumentError(f"expression uses x[{self.min_dim}] but points are {X.shape[1]}-dimensional")
        with np.errstate(all="ignore"):
            return np.broadcast_to(_evaluate(self.ast, X, None), (X.shape[0],)).astype(float)


def parse_expression(src: str) -> Expression:
    """Compile ``src`` into a vectorised function of ``(n, d)`` points; errors carry line/column."""
    p = _Parser(src)
    return Expression(src, p.parse(), p.max_coord)


def expression_target(src: str, domain) -> Target:
    expr = parse_expression(src)
    domain = as_domain(domain)
    if expr.min_dim > domain.dim:
        raise InvalidArgumentError(f"expression uses x[{expr.min_dim}] on a {domain.dim}-dimensional domain")
    return Target(src, domain, expr)
