"""Tiny arithmetic-expression language for coefficient functions.

Configuration files describe velocities, couplings and reference signals as
strings like ``"(1-z)^2 * tan(z/3)"``.  This module parses such strings into
an immutable AST and evaluates them on scalars or numpy arrays.  The grammar
is deliberately small: one free variable, the four binary operators, unary
minus, integer powers and a fixed set of unary functions.  There is no state
and no way to call anything else, so config files stay data.

Precedence, tightest first: power, unary minus, ``* /``, ``+ -``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "Expression",
    "ExpressionError",
    "ParseError",
    "EvalError",
    "parse_expression",
]

_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "abs": np.abs,
    "exp": np.exp,
    "ln": np.log,
    "sqrt": np.sqrt,
}


class ExpressionError(Exception):
    """Base class for expression failures."""


class ParseError(ExpressionError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class EvalError(ExpressionError):
    """Raised when evaluation leaves the real domain (division by zero, ln of
    a negative number, ...)."""


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: int


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, Pow, BinOp, Call]


class Expression:
    """A parsed coefficient expression in one variable.

    Calling the expression evaluates it; numpy broadcasting applies, so a
    whole grid can be evaluated at once.  Any non-finite result raises
    :class:`EvalError` rather than leaking NaN into downstream tables.
    """

    def __init__(self, root: Node, var: str = "z"):
        self.root = root
        self.var = var

    def __call__(self, value):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = _eval(self.root, self.var, value)
        out = np.asarray(out, dtype=float)
        if not np.all(np.isfinite(out)):
            raise EvalError(f"expression '{self.to_text()}' is not finite at {self.var}={value}")
        if out.ndim == 0:
            return float(out)
        return out

    def to_text(self) -> str:
        return _render(self.root)

    def __eq__(self, other) -> bool:
        return isinstance(other, Expression) and self.root == other.root and self.var == other.var

    def __repr__(self) -> str:
        return f"Expression({self.to_text()!r})"


def _eval(node: Node, var: str, value):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return np.asarray(value, dtype=float)
    if isinstance(node, Neg):
        return -_eval(node.arg, var, value)
    if isinstance(node, Pow):
        base = _eval(node.base, var, value)
        if node.exponent < 0:
            # negative powers hit the same zero-divisor check as '/'
            return np.asarray(base, dtype=float) ** float(node.exponent)
        return base ** node.exponent
    if isinstance(node, BinOp):
        left = _eval(node.left, var, value)
        right = _eval(node.right, var, value)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        return np.asarray(left, dtype=float) / right
    if isinstance(node, Call):
        return _FUNCTIONS[node.func](_eval(node.arg, var, value))
    raise TypeError(f"unknown node {node!r}")


# precedence levels used by the renderer; must mirror the parser
_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC_ADD if node.op in "+-" else _PREC_MUL
    if isinstance(node, Neg):
        return _PREC_NEG
    if isinstance(node, Pow):
        return _PREC_POW
    if isinstance(node, Num) and node.value < 0:
        return _PREC_NEG
    return _PREC_ATOM


def _wrap(node: Node, min_prec: int) -> str:
    text = _render(node)
    if _prec(node) < min_prec:
        return f"({text})"
    return text


def _render(node: Node) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"-{_wrap(node.arg, _PREC_NEG)}"
    if isinstance(node, Pow):
        return f"{_wrap(node.base, _PREC_ATOM)}^{node.exponent}"
    if isinstance(node, Call):
        return f"{node.func}({_render(node.arg)})"
    if node.op in "+-":
        # right operand needs parens at equal precedence: a - (b + c)
        return f"{_wrap(node.left, _PREC_ADD)} {node.op} {_wrap(node.right, _PREC_ADD + 1)}"
    return f"{_wrap(node.left, _PREC_MUL)} {node.op} {_wrap(node.right, _PREC_MUL + 1)}"


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self) -> str:
        ch = self.peek()
        self.pos += 1
        return ch

    def number(self) -> float:
        self.skip_ws()
        start = self.pos
        seen_digit = False
        while self.pos < len(self.text) and (self.text[self.pos].isdigit() or self.text[self.pos] == "."):
            seen_digit = seen_digit or self.text[self.pos].isdigit()
            self.pos += 1
        if self.pos < len(self.text) and self.text[self.pos] in "eE":
            mark = self.pos
            self.pos += 1
            if self.pos < len(self.text) and self.text[self.pos] in "+-":
                self.pos += 1
            if self.pos < len(self.text) and self.text[self.pos].isdigit():
                while self.pos < len(self.text) and self.text[self.pos].isdigit():
                    self.pos += 1
            else:
                self.pos = mark  # bare 'e' is not an exponent
        if not seen_digit:
            raise ParseError("expected a number", start)
        try:
            return float(self.text[start:self.pos])
        except ValueError:
            raise ParseError(f"bad number {self.text[start:self.pos]!r}", start) from None

    def identifier(self) -> str:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and (self.text[self.pos].isalnum() or self.text[self.pos] == "_"):
            self.pos += 1
        return self.text[start:self.pos]


class _Parser:
    def __init__(self, text: str, var: str):
        self.tok = _Tokenizer(text)
        self.var = var

    def parse(self) -> Node:
        self.tok.skip_ws()
        if self.tok.pos >= len(self.tok.text):
            raise ParseError("empty expression", 0)
        node = self.expr()
        self.tok.skip_ws()
        if self.tok.pos < len(self.tok.text):
            raise ParseError(f"unexpected {self.tok.text[self.tok.pos]!r}", self.tok.pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.peek() in ("+", "-"):
            op = self.tok.take()
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.peek() in ("*", "/"):
            op = self.tok.take()
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.peek() == "-":
            self.tok.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.tok.peek() == "^":
            self.tok.take()
            sign = 1
            if self.tok.peek() == "-":
                self.tok.take()
                sign = -1
            pos = self.tok.pos
            value = self.tok.number()
            if value != int(value):
                raise ParseError("exponent must be an integer", pos)
            return Pow(base, sign * int(value))
        return base

    def atom(self) -> Node:
        ch = self.tok.peek()
        if ch == "(":
            self.tok.take()
            node = self.expr()
            if self.tok.peek() != ")":
                raise ParseError("expected ')'", self.tok.pos)
            self.tok.take()
            return node
        if ch.isdigit() or ch == ".":
            return Num(self.tok.number())
        if ch.isalpha() or ch == "_":
            pos = self.tok.pos
            name = self.tok.identifier()
            if name == self.var:
                return Var(name)
            if name in _FUNCTIONS:
                if self.tok.peek() != "(":
                    raise ParseError(f"function {name!r} needs parentheses", self.tok.pos)
                self.tok.take()
                node = self.expr()
                if self.tok.peek() != ")":
                    raise ParseError("expected ')'", self.tok.pos)
                self.tok.take()
                return Call(name, node)
            raise ParseError(f"unknown identifier {name!r}", pos)
        if ch == "":
            raise ParseError("unexpected end of input", self.tok.pos)
        raise ParseError(f"unexpected {ch!r}", self.tok.pos)


def parse_expression(text: str, var: str = "z") -> Expression:
    """Parse ``text`` into an :class:`Expression` in the variable ``var``.

    Raises :class:`ParseError` with the offending position for anything the
    grammar does not cover (unknown identifiers, unbalanced parentheses,
    empty input, non-integer exponents).
    """
    if not isinstance(text, str):
        raise ParseError("expression must be a string", 0)
    return Expression(_Parser(text, var).parse(), var)
