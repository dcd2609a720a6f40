"""Arithmetic expressions over state variables ``x1 .. xn``.

Grammar (usual precedence, ``^`` right-associative and binding tighter than
unary minus, so ``-x1^2 == -(x1^2)``)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("-" | "+") unary | power
    power  := atom ("^" unary)?
    atom   := NUMBER | VAR | FUNC "(" expr ")" | "(" expr ")"

Compiled expressions evaluate vectorised over a trailing state axis.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ExprSyntaxError

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "ln": np.log,
    "abs": np.abs,
    "sqrt": np.sqrt,
}

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<var>x(?P<idx>\d+))
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        if kind == "idx":
            kind = "var"
        if kind != "ws":
            tokens.append(Token(kind, m.group(0), pos))
        pos = m.end()
    tokens.append(Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, n: int):
        self.text = text
        self.n = n
        self.tokens = tokenize(text)
        self.i = 0
        self.variables: set[int] = set()

    def peek(self) -> Token:
        return self.tokens[self.i]

    def take(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message: str, tok: Token | None = None):
        tok = tok or self.peek()
        raise ExprSyntaxError(message, self.text, tok.pos)

    def expect(self, text: str):
        tok = self.peek()
        if tok.text != text:
            found = "end of input" if tok.kind == "end" else repr(tok.text)
            self.fail(f"expected {text!r}, found {found}")
        return self.take()

    def parse(self):
        if self.peek().kind == "end":
            self.fail("empty expression")
        node = self.expr()
        if self.peek().kind != "end":
            self.fail(f"unexpected {self.peek().text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek().text in ("+", "-"):
            op = self.take().text
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek().text in ("*", "/"):
            op = self.take().text
            node = (op, node, self.unary())
        return node

    def unary(self):
        if self.peek().text == "-":
            self.take()
            return ("neg", self.unary())
        if self.peek().text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek().text == "^":
            self.take()
            return ("^", base, self.unary())
        return base

    def atom(self):
        tok = self.peek()
        if tok.kind == "num":
            self.take()
            return ("num", float(tok.text))
        if tok.kind == "var":
            self.take()
            idx = int(tok.text[1:])
            if not 1 <= idx <= self.n:
                self.fail(f"variable {tok.text} out of range x1..x{self.n}", tok)
            self.variables.add(idx)
            return ("var", idx - 1)
        if tok.kind == "name":
            if tok.text not in FUNCTIONS:
                self.fail(f"unknown name {tok.text!r}", tok)
            self.take()
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return ("call", tok.text, arg)
        if tok.text == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if tok.kind == "end" else repr(tok.text)
        self.fail(f"expected a number, variable, function or '(', found {found}")


def _evaluate(node, x):
    kind = node[0]
    if kind == "num":
        return node[1]
    if kind == "var":
        return x[..., node[1]]
    if kind == "neg":
        return -_evaluate(node[1], x)
    if kind == "call":
        return FUNCTIONS[node[1]](_evaluate(node[2], x))
    a = _evaluate(node[1], x)
    b = _evaluate(node[2], x)
    if kind == "+":
        return a + b
    if kind == "-":
        return a - b
    if kind == "*":
        return a * b
    if kind == "/":
        return np.divide(a, b)
    return np.power(a, b)


class Expression:
    """A compiled scalar field ``f(x)`` on R^n.

    Calling with an array of shape ``(..., n)`` returns shape ``(...)``.
    """

    def __init__(self, text: str, n: int):
        parser = _Parser(text, n)
        self.text = text
        self.n = n
        self.tree = parser.parse()
        self.variables = frozenset(parser.variables)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise ValueError(f"expected trailing dimension {self.n}, got {x.shape}")
        with np.errstate(all="ignore"):
            val = _evaluate(self.tree, x)
        return np.broadcast_to(np.asarray(val, dtype=float), x.shape[:-1]).copy()

    def __repr__(self):
        return f"Expression({self.text!r}, n={self.n})"


def compile_expression(text: str, n: int) -> Expression:
    if not isinstance(text, str):
        raise ExprSyntaxError("expression must be a string", str(text), 0)
    return Expression(text, n)
