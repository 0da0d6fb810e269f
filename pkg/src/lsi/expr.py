"""A tiny arithmetic expression language for coefficient and data fields.

Grammar (recursive descent, no code execution):

    expr   := term  (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | power
    power  := atom (('^' | '**') unary)?          # right associative
    atom   := NUMBER | 'x' | 'y' | 'pi'
            | ('sin' | 'cos' | 'exp') '(' expr ')'
            | '(' expr ')'

Expressions compile to closures evaluating vectorised over numpy arrays.
"""

from __future__ import annotations

import math
import re
from typing import Callable

import numpy as np

_TOKEN = re.compile(r"""
    (?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_]\w*)
  | (?P<pow>\*\*)
  | (?P<op>[-+*/^()])
  | (?P<ws>\s+)
""", re.VERBOSE)

_FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}


class ExpressionError(ValueError):
    pass


def _tokenize(text: str) -> list[str]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExpressionError(
                f"bad character {text[pos]!r} at position {pos} in {text!r}")
        pos = m.end()
        if m.lastgroup == "ws":
            continue
        if m.lastgroup == "pow":
            out.append("^")
        else:
            out.append(m.group())
    return out


class _Parser:
    def __init__(self, tokens: list[str], source: str):
        self.toks = tokens
        self.pos = 0
        self.source = source

    def peek(self) -> str | None:
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def take(self) -> str:
        tok = self.peek()
        if tok is None:
            raise ExpressionError(f"unexpected end of expression {self.source!r}")
        self.pos += 1
        return tok

    def expect(self, tok: str):
        got = self.take()
        if got != tok:
            raise ExpressionError(
                f"expected {tok!r}, got {got!r} in {self.source!r}")

    def expr(self):
        node = self.term()
        while self.peek() in ("+", "-"):
            op = self.take()
            rhs = self.term()
            node = (lambda a, b: lambda x, y: a(x, y) + b(x, y))(node, rhs) \
                if op == "+" else \
                (lambda a, b: lambda x, y: a(x, y) - b(x, y))(node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek() in ("*", "/"):
            op = self.take()
            rhs = self.unary()
            node = (lambda a, b: lambda x, y: a(x, y) * b(x, y))(node, rhs) \
                if op == "*" else \
                (lambda a, b: lambda x, y: a(x, y) / b(x, y))(node, rhs)
        return node

    def unary(self):
        if self.peek() in ("+", "-"):
            op = self.take()
            inner = self.unary()
            if op == "-":
                return (lambda a: lambda x, y: -a(x, y))(inner)
            return inner
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == "^":
            self.take()
            exponent = self.unary()
            return (lambda a, b: lambda x, y: a(x, y) ** b(x, y))(base, exponent)
        return base

    def atom(self):
        tok = self.take()
        if re.fullmatch(r"\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?", tok):
            val = float(tok)
            return lambda x, y: np.full_like(np.asarray(x, dtype=float), val)
        if tok == "(":
            node = self.expr()
            self.expect(")")
            return node
        if tok == "x":
            return lambda x, y: np.asarray(x, dtype=float)
        if tok == "y":
            return lambda x, y: np.asarray(y, dtype=float)
        if tok == "pi":
            return lambda x, y: np.full_like(np.asarray(x, dtype=float), math.pi)
        if tok in _FUNCTIONS:
            fn = _FUNCTIONS[tok]
            self.expect("(")
            node = self.expr()
            self.expect(")")
            return (lambda f, a: lambda x, y: f(a(x, y)))(fn, node)
        raise ExpressionError(f"unknown token {tok!r} in {self.source!r}")


def compile_expression(text: str) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Compile the expression to a vectorised ``f(x, y)`` closure."""
    parser = _Parser(_tokenize(text), text)
    node = parser.expr()
    if parser.peek() is not None:
        raise ExpressionError(
            f"trailing junk {parser.peek()!r} in {text!r}")
    return node


def evaluate(text: str, x, y):
    return compile_expression(text)(x, y)
