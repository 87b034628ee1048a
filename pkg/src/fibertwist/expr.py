"""Tiny arithmetic language for twist profiles such as ``3*z^2*cos(10*z)*log(z+1)``.

Grammar (whitespace ignored)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := unary ('^' factor)?
    unary  := '-' unary | atom
    atom   := number | 'z' | ident '(' expr ')' | '(' expr ')'

``^`` is right associative and binds tighter than ``*`` and ``/``.  The only
variable is ``z``; the function table holds ``sin``, ``cos``, ``log`` (natural)
and ``exp`` and can be extended with :func:`register_function`.

Evaluation accepts a float or a numpy array for ``z``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .errors import FiberTwistError

Number = Union[float, np.ndarray]


class ExprError(FiberTwistError, ValueError):
    """Base class for parse and evaluation errors."""


class ExprSyntaxError(ExprError):
    """Malformed expression text; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int, text: str = ""):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
        self.text = text


class UnknownFunction(ExprError):
    pass


class UnknownVariable(ExprError):
    pass


class DomainError(ExprError, ArithmeticError):
    """log of a non-positive number, or a non-finite result."""


def _checked_log(x):
    if np.any(np.asarray(x) <= 0):
        raise DomainError("log of non-positive argument")
    return np.log(x)


FUNCTIONS: dict[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "log": _checked_log,
    "exp": np.exp,
}


def register_function(name: str, fn: Callable) -> None:
    """Make ``fn`` callable from expressions as ``name(...)``."""
    if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name) or name == "z":
        raise ValueError(f"invalid function name {name!r}")
    FUNCTIONS[name] = fn


# --------------------------------------------------------------------- AST

class Expr:
    def eval(self, z: Number) -> Number:
        return evaluate(self, z)


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str = "z"


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    name: str
    arg: Expr


# ----------------------------------------------------------------- lexer

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}",
                                  len(text[:pos].encode()), text)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), len(text[:pos].encode())))
        pos = m.end()
    tokens.append(("end", "", len(text.encode())))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(message, tok[2], self.text)

    def expect(self, value):
        tok = self.peek()
        if tok[1] != value or tok[0] != "op":
            self.fail(f"expected {value!r}")
        return self.take()

    def parse(self) -> Expr:
        if self.peek()[0] == "end":
            self.fail("empty expression")
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        base = self.unary()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.factor())
        return base

    def unary(self):
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.atom()

    def atom(self):
        tok = self.peek()
        kind, value, _ = tok
        if kind == "num":
            self.take()
            return Num(float(value))
        if kind == "ident":
            self.take()
            nxt = self.peek()
            if nxt[0] == "op" and nxt[1] == "(":
                if value not in FUNCTIONS:
                    raise UnknownFunction(f"unknown function {value!r}")
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(value, arg)
            if value != "z":
                raise UnknownVariable(f"unknown variable {value!r}")
            return Var()
        if kind == "op" and value == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            self.fail("unexpected end of expression")
        self.fail(f"unexpected token {value!r}")


def parse(text: str) -> Expr:
    """Parse ``text`` into an expression tree."""
    return _Parser(text).parse()


# ------------------------------------------------------------ evaluation

def _power(x, y):
    x_arr, y_arr = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    integral = y_arr == np.round(y_arr)
    if np.any(~integral & (x_arr <= 0)):
        raise DomainError("non-integer power of non-positive base")
    with np.errstate(all="ignore"):
        return np.where(integral, np.power(x_arr, y_arr),
                        np.exp(y_arr * np.log(np.abs(x_arr) + (x_arr == 0))))


def _eval(node: Expr, z):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return z
    if isinstance(node, Neg):
        return -_eval(node.operand, z)
    if isinstance(node, Call):
        return FUNCTIONS[node.name](_eval(node.arg, z))
    if isinstance(node, BinOp):
        a = _eval(node.left, z)
        b = _eval(node.right, z)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.divide(a, b)
        return _power(a, b)
    raise TypeError(f"not an expression node: {node!r}")


def evaluate(e: Expr, z: Number) -> Number:
    """Evaluate ``e`` at ``z`` (scalar or array).

    Raises
    ------
    DomainError
        If ``log`` sees a non-positive argument or the result is not finite.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        out = _eval(e, np.asarray(z, dtype=float) if np.ndim(z) else float(z))
    out = np.broadcast_to(np.asarray(out, dtype=float), np.shape(z))
    if not np.all(np.isfinite(out)):
        raise DomainError("expression evaluated to a non-finite value")
    return float(out) if out.ndim == 0 else np.array(out)
