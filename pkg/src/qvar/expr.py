"""Lagrangian expressions: parsing, evaluation, symbolic partial derivatives.

Grammar (EBNF)::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = "-" unary | power ;
    power   = atom [ "^" unary ] ;          (* right associative *)
    atom    = number | "t" | "u" digits | func "(" expr ")" | "(" expr ")" ;
    func    = "exp" | "ln" | "sin" | "cos" | "sqrt" ;
    number  = digits [ "." [digits] ] [ exponent ] | "." digits [ exponent ] ;

A Lagrangian of order ``r`` takes the argument vector ``(t, u1, ..., u{r+1})``.
Argument positions used by :func:`differentiate` are 1-based over that
vector: position 1 is ``t`` and position ``i + 1`` is ``u{i}``.
"""

from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from qvar.errors import ArityError, EvalDomainError, ParseError

__all__ = [
    "Node",
    "Num",
    "Var",
    "Neg",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Pow",
    "Call",
    "ExprAst",
    "FUNCTIONS",
    "parse_expression",
    "eval_expression",
    "differentiate",
    "to_text",
]

FUNCTIONS = ("exp", "ln", "sin", "cos", "sqrt")


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    """Position in the argument vector: 0 is ``t``, ``i`` is ``u{i}``."""

    index: int


@dataclass(frozen=True)
class Neg:
    arg: Node


@dataclass(frozen=True)
class Add:
    left: Node
    right: Node


@dataclass(frozen=True)
class Sub:
    left: Node
    right: Node


@dataclass(frozen=True)
class Mul:
    left: Node
    right: Node


@dataclass(frozen=True)
class Div:
    left: Node
    right: Node


@dataclass(frozen=True)
class Pow:
    left: Node
    right: Node


@dataclass(frozen=True)
class Call:
    fn: str
    arg: Node


Node = Union[Num, Var, Neg, Add, Sub, Mul, Div, Pow, Call]


@dataclass(frozen=True)
class ExprAst:
    root: Node
    r: int

    @property
    def n_args(self) -> int:
        return self.r + 2

    def __call__(self, *args):
        return evaluate(self.root, args)

    def __str__(self) -> str:
        return to_text(self.root)


# -- parsing -----------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ParseError(f"unexpected character {text[start]!r}", start)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, r: int) -> None:
        self.tokens = _tokenize(text)
        self.i = 0
        self.r = r

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str) -> None:
        kind, val, pos = self.take()
        if val != value or kind != "op":
            found = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {found}", pos)

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            node = Mul(node, rhs) if op == "*" else Div(node, rhs)
        return node

    def unary(self) -> Node:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Pow(base, self.unary())
        return base

    def atom(self) -> Node:
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val == "t":
                return Var(0)
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            m = re.fullmatch(r"u(\d+)", val)
            if m:
                idx = int(m.group(1))
                if not 1 <= idx <= self.r + 1:
                    raise ArityError(
                        f"variable {val} at position {pos} is outside u1..u{self.r + 1} "
                        f"for order r={self.r}"
                    )
                return Var(idx)
            raise ParseError(f"unknown name {val!r}", pos)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {found}", pos)


def parse_expression(text: str, r: int) -> ExprAst:
    """Parse ``text`` as a Lagrangian of order ``r``."""
    if r < 1:
        raise ValueError(f"order r must be >= 1, got {r}")
    if not text or not text.strip():
        raise ParseError("empty expression", 0)
    p = _Parser(text, r)
    root = p.expr()
    kind, val, pos = p.peek()
    if kind != "end":
        raise ParseError(f"unexpected {val!r}", pos)
    return ExprAst(root, r)


# -- printing ----------------------------------------------------------------

_SYMBOL = {Add: "+", Sub: "-", Mul: "*", Div: "/", Pow: "^"}


def to_text(node: Node) -> str:
    """Fully parenthesized text that parses back to an equivalent tree."""
    if isinstance(node, Num):
        s = repr(node.value)
        return f"({s})" if node.value < 0 or s.startswith("-") else s
    if isinstance(node, Var):
        return "t" if node.index == 0 else f"u{node.index}"
    if isinstance(node, Neg):
        return f"(-{to_text(node.arg)})"
    if isinstance(node, Call):
        return f"{node.fn}({to_text(node.arg)})"
    return f"({to_text(node.left)} {_SYMBOL[type(node)]} {to_text(node.right)})"


# -- evaluation --------------------------------------------------------------


def _checked(value, what: str):
    if not np.all(np.isfinite(value)):
        raise EvalDomainError(f"{what} produced a non-finite value")
    return value


def evaluate(node: Node, args: Sequence):
    """Evaluate ``node`` on scalars or equally shaped arrays.

    ``args[0]`` is ``t`` and ``args[i]`` is ``u{i}``.
    """
    with np.errstate(all="ignore"):
        return _eval(node, args)


def _eval(node: Node, args: Sequence):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return args[node.index]
    if isinstance(node, Neg):
        return -_eval(node.arg, args)
    if isinstance(node, Call):
        x = _eval(node.arg, args)
        if node.fn == "ln":
            if np.any(np.asarray(x) <= 0):
                raise EvalDomainError("ln of a nonpositive number")
            return np.log(x)
        if node.fn == "sqrt":
            if np.any(np.asarray(x) < 0):
                raise EvalDomainError("sqrt of a negative number")
            return np.sqrt(x)
        if node.fn == "exp":
            return _checked(np.exp(x), "exp")
        if node.fn == "sin":
            return np.sin(x)
        return np.cos(x)
    a = _eval(node.left, args)
    b = _eval(node.right, args)
    if isinstance(node, Add):
        return _checked(a + b, "addition")
    if isinstance(node, Sub):
        return _checked(a - b, "subtraction")
    if isinstance(node, Mul):
        return _checked(a * b, "multiplication")
    if isinstance(node, Div):
        if np.any(np.asarray(b) == 0):
            raise EvalDomainError("division by zero")
        return _checked(a / b, "division")
    return _checked(np.power(np.asarray(a, dtype=float), b), "power")


def eval_expression(ast: ExprAst, args: Sequence[float]) -> float:
    """Evaluate at ``args = (t, u1, ..., u{r+1})``."""
    if len(args) != ast.n_args:
        raise ValueError(f"expected {ast.n_args} arguments (t, u1..u{ast.r + 1}), got {len(args)}")
    vals = [float(v) for v in args]
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("arguments must be finite")
    return float(evaluate(ast.root, vals))


# -- symbolic differentiation ------------------------------------------------

_ZERO = Num(0.0)
_ONE = Num(1.0)


def _fold(node: Node) -> Node:
    try:
        value = float(evaluate(node, ()))
    except (EvalDomainError, IndexError):
        return node
    return Num(value) if math.isfinite(value) else node


def _neg(a: Node) -> Node:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _add(a: Node, b: Node) -> Node:
    if a == _ZERO:
        return b
    if b == _ZERO:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return _fold(Add(a, b))
    return Add(a, b)


def _sub(a: Node, b: Node) -> Node:
    if b == _ZERO:
        return a
    if a == _ZERO:
        return _neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return _fold(Sub(a, b))
    return Sub(a, b)


def _mul(a: Node, b: Node) -> Node:
    if a == _ZERO or b == _ZERO:
        return _ZERO
    if a == _ONE:
        return b
    if b == _ONE:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return _fold(Mul(a, b))
    return Mul(a, b)


def _div(a: Node, b: Node) -> Node:
    if b == _ONE:
        return a
    if a == _ZERO:
        return _ZERO
    if isinstance(a, Num) and isinstance(b, Num):
        return _fold(Div(a, b))
    return Div(a, b)


def _pow(a: Node, b: Node) -> Node:
    if b == _ONE:
        return a
    if b == _ZERO:
        return _ONE
    if isinstance(a, Num) and isinstance(b, Num):
        return _fold(Pow(a, b))
    return Pow(a, b)


def _depends(node: Node, index: int) -> bool:
    if isinstance(node, Num):
        return False
    if isinstance(node, Var):
        return node.index == index
    if isinstance(node, (Neg, Call)):
        return _depends(node.arg, index)
    return _depends(node.left, index) or _depends(node.right, index)


def _d(node: Node, v: int) -> Node:
    if not _depends(node, v):
        return _ZERO
    if isinstance(node, Var):
        return _ONE
    if isinstance(node, Neg):
        return _neg(_d(node.arg, v))
    if isinstance(node, Call):
        x, dx = node.arg, _d(node.arg, v)
        if node.fn == "exp":
            outer: Node = node
        elif node.fn == "ln":
            return _div(dx, x)
        elif node.fn == "sin":
            outer = Call("cos", x)
        elif node.fn == "cos":
            outer = _neg(Call("sin", x))
        else:
            return _div(dx, _mul(Num(2.0), node))
        return _mul(outer, dx)
    a, b = node.left, node.right
    if isinstance(node, Add):
        return _add(_d(a, v), _d(b, v))
    if isinstance(node, Sub):
        return _sub(_d(a, v), _d(b, v))
    if isinstance(node, Mul):
        return _add(_mul(_d(a, v), b), _mul(a, _d(b, v)))
    if isinstance(node, Div):
        return _sub(_div(_d(a, v), b), _div(_mul(a, _d(b, v)), _pow(b, Num(2.0))))
    # Pow
    if not _depends(b, v):
        return _mul(_mul(b, _pow(a, _sub(b, _ONE))), _d(a, v))
    if not _depends(a, v):
        return _mul(_mul(node, Call("ln", a)), _d(b, v))
    return _mul(
        node,
        _add(_mul(_d(b, v), Call("ln", a)), _div(_mul(b, _d(a, v)), a)),
    )


@functools.lru_cache(maxsize=4096)
def differentiate(ast: ExprAst, arg_index: int) -> ExprAst:
    """Partial derivative with respect to argument position ``arg_index``.

    Position 1 is ``t``; position ``i + 1`` is ``u{i}``.
    """
    if not 1 <= arg_index <= ast.n_args:
        raise ValueError(f"argument index must be in 1..{ast.n_args}, got {arg_index}")
    return ExprAst(_d(ast.root, arg_index - 1), ast.r)
