"""Small expression language for coefficient functions of one time variable ``s``.

Grammar (``^`` binds tighter than ``*`` and is right-associative)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | power
    power  := atom ("^" unary)?
    atom   := NUMBER | "s" | FUNC "(" expr ")" | "(" expr ")"
    FUNC   := "sin" | "cos" | "exp"

Exponents must fold to an integer constant. Evaluation accepts floats or
numpy arrays.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "Expr",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Pow",
    "Call",
    "ExprSyntaxError",
    "ExprDomainError",
    "parse",
    "evaluate",
    "differentiate",
    "to_text",
]

FUNCTIONS = ("sin", "cos", "exp")


class ExprSyntaxError(ValueError):
    """Raised on malformed input; carries the byte offset and expected tokens."""

    def __init__(self, message: str, position: int, expected: frozenset[str] = frozenset()):
        self.position = position
        self.expected = frozenset(expected)
        detail = f" (expected one of: {', '.join(sorted(self.expected))})" if self.expected else ""
        super().__init__(f"{message} at offset {position}{detail}")


class ExprDomainError(ArithmeticError):
    """Raised when evaluation leaves the real domain (pole, 0 to a negative power)."""


Real = Union[float, np.ndarray]


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


@dataclass(frozen=True)
class Call:
    name: str
    arg: "Expr"


Expr = Union[Num, Var, Neg, BinOp, Pow, Call]


# ---------------------------------------------------------------- tokenizer

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # "num", "name", "op", "end"
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    raw = text.encode("utf-8")
    toks: list[_Tok] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            rest = text[pos:]
            if rest.strip() == "":
                break
            bad = pos + (len(rest) - len(rest.lstrip()))
            raise ExprSyntaxError(f"unexpected character {text[bad]!r}", len(text[:bad].encode("utf-8")))
        kind = m.lastgroup
        start = m.start(kind)
        toks.append(_Tok(kind, m.group(kind), len(text[:start].encode("utf-8"))))
        pos = m.end()
    toks.append(_Tok("end", "", len(raw)))
    return toks


# ---------------------------------------------------------------- parser

_ATOM_START = frozenset({"number", "s", "sin", "cos", "exp", "(", "-"})


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str) -> None:
        if self.tok.kind == "op" and self.tok.text == op:
            self.advance()
            return
        raise ExprSyntaxError(f"unexpected {self._describe()}", self.tok.pos, frozenset({op}))

    def _describe(self) -> str:
        return "end of input" if self.tok.kind == "end" else f"token {self.tok.text!r}"

    def parse(self) -> Expr:
        node = self.expr()
        if self.tok.kind != "end":
            raise ExprSyntaxError(
                f"unexpected {self._describe()}", self.tok.pos, frozenset({"+", "-", "*", "/", "^", "end of input"})
            )
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            pos = self.tok.pos
            exponent = self.unary()
            value = _constant_value(exponent)
            if value is None:
                raise ExprSyntaxError("exponent must be a constant", pos, frozenset({"integer"}))
            if not float(value).is_integer():
                raise ExprSyntaxError("exponent must be an integer", pos, frozenset({"integer"}))
            return Pow(base, int(value))
        return base

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "name":
            if tok.text == "s":
                self.advance()
                return Var()
            if tok.text in FUNCTIONS:
                self.advance()
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return Call(tok.text, arg)
            raise ExprSyntaxError(f"unknown identifier {tok.text!r}", tok.pos, _ATOM_START)
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExprSyntaxError(f"unexpected {self._describe()}", tok.pos, _ATOM_START)


def parse(text: str) -> Expr:
    """Parse ``text`` into an expression tree."""
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0, _ATOM_START)
    return _Parser(text).parse()


def _constant_value(node: Expr) -> float | None:
    """Fold a variable-free subtree to a float, or return None."""
    if _has_var(node):
        return None
    return float(evaluate(node, 0.0))


def _has_var(node: Expr) -> bool:
    if isinstance(node, Var):
        return True
    if isinstance(node, Num):
        return False
    if isinstance(node, (Neg, Call)):
        return _has_var(node.arg)
    if isinstance(node, Pow):
        return _has_var(node.base)
    return _has_var(node.left) or _has_var(node.right)


# ---------------------------------------------------------------- evaluation

_UFUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}


def evaluate(node: Expr, s: Real) -> Real:
    """Evaluate at a float or an array of points."""
    if isinstance(node, Num):
        return node.value if np.ndim(s) == 0 else np.full(np.shape(s), node.value)
    if isinstance(node, Var):
        return s
    if isinstance(node, Neg):
        return -evaluate(node.arg, s)
    if isinstance(node, Call):
        with np.errstate(over="ignore"):
            return _UFUNCS[node.name](evaluate(node.arg, s))
    if isinstance(node, Pow):
        base = evaluate(node.base, s)
        if node.exponent < 0 and np.any(np.asarray(base) == 0):
            raise ExprDomainError("zero raised to a negative power")
        if np.ndim(base) == 0:
            return float(base) ** node.exponent
        return np.asarray(base, dtype=float) ** float(node.exponent)
    left = evaluate(node.left, s)
    right = evaluate(node.right, s)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if np.any(np.asarray(right) == 0):
        raise ExprDomainError("division by zero")
    return left / right


# ---------------------------------------------------------------- derivative

_ZERO, _ONE = Num(0.0), Num(1.0)


def _is(node: Expr, value: float) -> bool:
    return isinstance(node, Num) and node.value == value


def _add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return BinOp("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return _neg(b)
    return BinOp("-", a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    if _is(a, 0.0) or _is(b, 0.0):
        return _ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    return BinOp("*", a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0):
        return _ZERO
    if _is(b, 1.0):
        return a
    return BinOp("/", a, b)


def _neg(a: Expr) -> Expr:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _pow(base: Expr, k: int) -> Expr:
    if k == 0:
        return _ONE
    if k == 1:
        return base
    if isinstance(base, Num) and not (base.value == 0 and k < 0):
        return Num(base.value**k)
    return Pow(base, k)


def differentiate(node: Expr) -> Expr:
    """Symbolic d/ds with constant folding."""
    if isinstance(node, Num):
        return _ZERO
    if isinstance(node, Var):
        return _ONE
    if isinstance(node, Neg):
        return _neg(differentiate(node.arg))
    if isinstance(node, Call):
        inner = differentiate(node.arg)
        if node.name == "sin":
            outer: Expr = Call("cos", node.arg)
        elif node.name == "cos":
            outer = _neg(Call("sin", node.arg))
        else:
            outer = node
        return _mul(outer, inner)
    if isinstance(node, Pow):
        k = node.exponent
        if k == 0:
            return _ZERO
        return _mul(_mul(Num(float(k)), _pow(node.base, k - 1)), differentiate(node.base))
    dl, dr = differentiate(node.left), differentiate(node.right)
    if node.op == "+":
        return _add(dl, dr)
    if node.op == "-":
        return _sub(dl, dr)
    if node.op == "*":
        return _add(_mul(dl, node.right), _mul(node.left, dr))
    # quotient rule
    return _div(_sub(_mul(dl, node.right), _mul(node.left, dr)), _pow(node.right, 2))


# ---------------------------------------------------------------- printer


def _num_text(value: float) -> str:
    if value.is_integer() and abs(value) < 1e16:
        text = str(int(value))
    else:
        text = repr(value)
    return f"({text})" if value < 0 or text.startswith("-") else text


def to_text(node: Expr) -> str:
    """Canonical fully parenthesized form; re-parses to an equal-valued tree."""
    if isinstance(node, Num):
        if not math.isfinite(node.value):
            raise ValueError("non-finite literal cannot be printed")
        return _num_text(node.value)
    if isinstance(node, Var):
        return "s"
    if isinstance(node, Neg):
        return f"(-{to_text(node.arg)})"
    if isinstance(node, Call):
        return f"{node.name}({to_text(node.arg)})"
    if isinstance(node, Pow):
        return f"({to_text(node.base)} ^ {_num_text(float(node.exponent))})"
    return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
