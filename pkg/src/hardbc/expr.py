"""Small arithmetic expression language for boundary data and coefficients.

Expressions are parsed from text such as ``"sin(alpha*x)*cos(beta*y)"`` into an
immutable tree, evaluated with numpy (scalars or arrays), and differentiated
symbolically with respect to ``x`` or ``y``.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | power
    power  := base ('^' factor)?
    base   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'

``^`` is right-associative and binds tighter than unary minus, so ``-x^2`` is
``-(x^2)`` and ``2^3^2`` is ``2^9``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

VARIABLES = ("x", "y", "alpha", "beta")
FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt}
CONSTANTS = {"pi": math.pi}

Number = Union[float, np.ndarray]


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprSyntaxError):
    pass


class ExprEvalError(ExprError):
    pass


class Expr:
    """Base class of the expression tree. Instances are immutable."""

    def __str__(self) -> str:
        return to_string(self)

    def __call__(self, bindings: Mapping[str, Number] | None = None, **kw) -> Number:
        env = dict(bindings or {})
        env.update(kw)
        return evaluate(self, env)

    @property
    def free_variables(self) -> frozenset:
        return _free(self)


@dataclass(frozen=True, eq=True)
class Num(Expr):
    value: float

    __str__ = Expr.__str__


@dataclass(frozen=True, eq=True)
class Var(Expr):
    name: str

    __str__ = Expr.__str__


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr

    __str__ = Expr.__str__


@dataclass(frozen=True, eq=True)
class Func(Expr):
    name: str
    arg: Expr

    __str__ = Expr.__str__


@dataclass(frozen=True, eq=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    __str__ = Expr.__str__


ZERO = Num(0.0)
ONE = Num(1.0)

# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {text[start]!r}", start)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, off = self.take()
        if val != value or kind == "end":
            found = "end of input" if kind == "end" else repr(val)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", off)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {val!r}", off)
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.factor())
        return left

    def factor(self) -> Expr:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.factor())
        return self.power()

    def power(self) -> Expr:
        base = self.base()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.factor())
        return base

    def base(self) -> Expr:
        kind, val, off = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "ident":
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Func(val, arg)
            if val in CONSTANTS:
                return Num(CONSTANTS[val])
            if val in VARIABLES:
                return Var(val)
            raise UnknownIdentifierError(f"unknown identifier {val!r}", off)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(f"unexpected {found}", off)


def parse(text: str) -> Expr:
    """Parse ``text`` into an expression tree.

    Raises
    ------
    ExprSyntaxError
        On malformed input; ``offset`` holds the position of the offending token.
    UnknownIdentifierError
        When an identifier outside ``x, y, alpha, beta, pi, sin, cos, exp, sqrt``
        appears.
    """
    if not isinstance(text, str):
        raise TypeError("expression text must be a string")
    return _Parser(text).parse()


def as_expr(value) -> Expr:
    """Coerce strings, numbers and expressions to :class:`Expr`."""
    if isinstance(value, Expr):
        return value
    if isinstance(value, str):
        return parse(value)
    if isinstance(value, (int, float)):
        return Num(float(value))
    raise TypeError(f"cannot convert {type(value).__name__} to an expression")


# ---------------------------------------------------------------------------
# evaluation


def _eval(e: Expr, env: Mapping[str, Number]):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise ExprEvalError(f"missing binding for {e.name!r}") from None
    if isinstance(e, Neg):
        return -_eval(e.arg, env)
    if isinstance(e, Func):
        return FUNCTIONS[e.name](_eval(e.arg, env))
    a = _eval(e.left, env)
    b = _eval(e.right, env)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "/":
        return np.divide(a, b)
    return np.power(np.asarray(a, dtype=float), b)


def evaluate(e: Expr, bindings: Mapping[str, Number]) -> Number:
    """Evaluate ``e`` in IEEE double precision.

    Bindings may be scalars or numpy arrays (broadcast together). Non-finite
    results, e.g. from division by zero or ``0^-1``, raise :class:`ExprEvalError`.
    """
    with np.errstate(all="ignore"):
        out = _eval(e, bindings)
    arr = np.asarray(out, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ExprEvalError(f"non-finite result evaluating {to_string(e)}")
    if arr.ndim == 0:
        return float(arr)
    return arr


def _free(e: Expr) -> frozenset:
    if isinstance(e, Var):
        return frozenset([e.name])
    if isinstance(e, Num):
        return frozenset()
    if isinstance(e, (Neg, Func)):
        return _free(e.arg)
    return _free(e.left) | _free(e.right)


def is_constant(e: Expr, value: float | None = None) -> bool:
    if not isinstance(e, Num):
        return False
    return value is None or e.value == value


def substitute(e: Expr, values: Mapping[str, float]) -> Expr:
    """Replace variables by numeric constants."""
    if isinstance(e, Var):
        return Num(float(values[e.name])) if e.name in values else e
    if isinstance(e, Num):
        return e
    if isinstance(e, Neg):
        return neg(substitute(e.arg, values))
    if isinstance(e, Func):
        return Func(e.name, substitute(e.arg, values))
    return _binop(e.op, substitute(e.left, values), substitute(e.right, values))


# ---------------------------------------------------------------------------
# printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _fmt_num(v: float) -> str:
    if v == math.pi:
        return "pi"
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return _PREC["neg"]
    if isinstance(e, Num) and e.value < 0:
        return _PREC["neg"]
    return 5


def to_string(e: Expr) -> str:
    """Render ``e`` so that ``parse(to_string(e))`` evaluates identically."""
    if isinstance(e, Num):
        if e.value < 0:
            return "-" + _fmt_num(-e.value)
        return _fmt_num(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Func):
        return f"{e.name}({to_string(e.arg)})"
    if isinstance(e, Neg):
        inner = to_string(e.arg)
        # -(x^2) and -x^2 parse alike; anything looser needs parentheses
        if _prec(e.arg) < _PREC["neg"]:
            inner = f"({inner})"
        return "-" + inner
    p = _PREC[e.op]
    left = to_string(e.left)
    right = to_string(e.right)
    if e.op == "^":
        if _prec(e.left) <= p:
            left = f"({left})"
        if _prec(e.right) < _PREC["neg"]:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(e.left) < p:
        left = f"({left})"
    if _prec(e.right) <= p or (_prec(e.right) == _PREC["neg"] and p >= 2):
        right = f"({right})"
    return f"{left} {e.op} {right}"


# ---------------------------------------------------------------------------
# construction helpers with light constant folding


def neg(a: Expr) -> Expr:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def add(a: Expr, b: Expr) -> Expr:
    if is_constant(a, 0.0):
        return b
    if is_constant(b, 0.0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if is_constant(b, 0.0):
        return a
    if is_constant(a, 0.0):
        return neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if is_constant(a, 0.0) or is_constant(b, 0.0):
        return ZERO
    if is_constant(a, 1.0):
        return b
    if is_constant(b, 1.0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if is_constant(a, 0.0) and not is_constant(b, 0.0):
        return ZERO
    if is_constant(b, 1.0):
        return a
    return BinOp("/", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if is_constant(b, 0.0):
        return ONE
    if is_constant(b, 1.0):
        return a
    return BinOp("^", a, b)


def _binop(op: str, a: Expr, b: Expr) -> Expr:
    return {"+": add, "-": sub, "*": mul, "/": div, "^": power}[op](a, b)


# ---------------------------------------------------------------------------
# differentiation


def diff(e: Expr, var: str) -> Expr:
    """Exact symbolic derivative of ``e`` with respect to ``var`` (``x`` or ``y``).

    ``alpha`` and ``beta`` are treated as constants.
    """
    if var not in ("x", "y"):
        raise ValueError(f"can only differentiate with respect to x or y, not {var!r}")
    return _diff(e, var)


def _diff(e: Expr, v: str) -> Expr:
    if isinstance(e, Num):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if isinstance(e, Neg):
        return neg(_diff(e.arg, v))
    if isinstance(e, Func):
        du = _diff(e.arg, v)
        if is_constant(du, 0.0):
            return ZERO
        u = e.arg
        if e.name == "sin":
            outer = Func("cos", u)
        elif e.name == "cos":
            outer = neg(Func("sin", u))
        elif e.name == "exp":
            outer = e
        else:  # sqrt
            outer = div(Num(0.5), e)
        return mul(outer, du)
    a, b = e.left, e.right
    da, db = _diff(a, v), _diff(b, v)
    if e.op == "+":
        return add(da, db)
    if e.op == "-":
        return sub(da, db)
    if e.op == "*":
        return add(mul(da, b), mul(a, db))
    if e.op == "/":
        return div(sub(mul(da, b), mul(a, db)), power(b, Num(2.0)))
    # power
    if v not in _free(b):
        if is_constant(da, 0.0):
            return ZERO
        return mul(mul(b, power(a, sub(b, ONE))), da)
    if v not in _free(a):
        if not isinstance(a, Num) or a.value <= 0:
            raise ValueError("derivative of a variable exponent needs a positive numeric base")
        return mul(mul(e, Num(math.log(a.value))), db)
    raise ValueError("derivative of f^g with both f and g varying is not supported")
