"""Small arithmetic expression language for user-supplied coefficient functions.

Coefficients (drift, volatility, jump amplitude/weights, drivers, switching
costs, terminal data) are given as strings over named variables and parsed
into immutable ASTs once.  Evaluation binds variables to floats or numpy
arrays, so a single expression evaluates over a whole grid or path batch in
one call.

Grammar (precedence climbing, loosest to tightest):

    expr    := term (('+' | '-') term)*
    term    := factor (('*' | '/') factor)*
    factor  := '-' factor | power
    power   := atom ('^' factor)?          # right-associative
    atom    := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Built-in functions: min(a,b), max(a,b), pow(a,b), abs(a), exp(a), log(a),
sqrt(a).  There is no branching; min/max cover every kink the supported
problem class needs.  Division is allowed but can silently destroy Lipschitz
continuity of a coefficient, so prefer polynomial/exp forms.

Every non-finite intermediate (overflow, log of a non-positive value,
division by zero) raises :class:`NumericDomainError` naming the offending
subexpression; evaluation never returns NaN or infinity.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Expr",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "ExprError",
    "ExprSyntaxError",
    "UnknownVariableError",
    "ArityError",
    "NumericDomainError",
    "parse",
    "evaluate",
    "format_expr",
    "substitute",
    "free_variables",
    "expr_depth",
]

MAX_DEPTH = 64

FUNCTIONS = {"min": 2, "max": 2, "pow": 2, "abs": 1, "exp": 1, "log": 1, "sqrt": 1}


class ExprError(ValueError):
    """Base class for all DSL errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int, expected: tuple[str, ...] = ()):
        self.offset = offset
        self.expected = expected
        hint = f" (expected one of: {', '.join(expected)})" if expected else ""
        super().__init__(f"{message} at offset {offset}{hint}")


class UnknownVariableError(ExprError):
    def __init__(self, name: str, offset: int, schema: tuple[str, ...]):
        self.name = name
        self.offset = offset
        super().__init__(
            f"unknown variable '{name}' at offset {offset}; declared variables: {', '.join(schema) or '(none)'}"
        )


class ArityError(ExprError):
    def __init__(self, fn: str, got: int, want: int, offset: int):
        self.offset = offset
        super().__init__(f"function '{fn}' takes {want} argument(s), got {got} at offset {offset}")


class NumericDomainError(ExprError):
    def __init__(self, detail: str, subexpr: str):
        self.subexpr = subexpr
        super().__init__(f"{detail} in subexpression '{subexpr}'")


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple["Expr", ...]


Expr = Union[Num, Var, Neg, BinOp, Call]

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            # skip whitespace-only tail
            if text[pos:].strip() == "":
                break
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character '{text[bad]}'", bad)
        if m.group("num") is not None:
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.group("name") is not None:
            tokens.append(("name", m.group("name"), m.start("name")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, schema: tuple[str, ...]):
        self.text = text
        self.schema = schema
        self.tokens = _tokenize(text)
        self.idx = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.idx]

    def advance(self) -> tuple[str, str, int]:
        tok = self.tokens[self.idx]
        self.idx += 1
        return tok

    def expect_op(self, op: str) -> None:
        kind, val, off = self.peek()
        if kind != "op" or val != op:
            raise ExprSyntaxError(f"expected '{op}'", off, expected=(op,))
        self.advance()

    def parse_expr(self) -> Expr:
        node = self.parse_term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                rhs = self.parse_term()
                node = BinOp(val, node, rhs)
            else:
                return node

    def parse_term(self) -> Expr:
        node = self.parse_factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.advance()
                rhs = self.parse_factor()
                node = BinOp(val, node, rhs)
            else:
                return node

    def parse_factor(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.advance()
            return Neg(self.parse_factor())
        return self.parse_power()

    def parse_power(self) -> Expr:
        base = self.parse_atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.advance()
            # right-associative; exponent may carry a unary minus
            exponent = self.parse_factor()
            return BinOp("^", base, exponent)
        return base

    def parse_atom(self) -> Expr:
        kind, val, off = self.advance()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            nkind, nval, _ = self.peek()
            if nkind == "op" and nval == "(":
                return self.parse_call(val, off)
            if val not in self.schema:
                raise UnknownVariableError(val, off, self.schema)
            return Var(val)
        if kind == "op" and val == "(":
            node = self.parse_expr()
            self.expect_op(")")
            return node
        if kind == "end":
            raise ExprSyntaxError("unexpected end of input", off)
        raise ExprSyntaxError(f"unexpected token '{val}'", off)

    def parse_call(self, fn: str, off: int) -> Expr:
        if fn not in FUNCTIONS:
            raise ExprSyntaxError(f"unknown function '{fn}'", off, expected=tuple(sorted(FUNCTIONS)))
        self.expect_op("(")
        args = [self.parse_expr()]
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val == ",":
                self.advance()
                args.append(self.parse_expr())
            else:
                break
        self.expect_op(")")
        want = FUNCTIONS[fn]
        if len(args) != want:
            raise ArityError(fn, len(args), want, off)
        return Call(fn, tuple(args))


def parse(text: str, schema: Sequence[str], max_depth: int = MAX_DEPTH) -> Expr:
    """Parse ``text`` into an AST; every variable must appear in ``schema``."""
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    parser = _Parser(text, tuple(schema))
    node = parser.parse_expr()
    kind, val, off = parser.peek()
    if kind != "end":
        raise ExprSyntaxError(f"unexpected trailing token '{val}'", off)
    d = expr_depth(node)
    if d > max_depth:
        raise ExprSyntaxError(f"expression tree depth {d} exceeds limit {max_depth}", 0)
    return node


def expr_depth(expr: Expr) -> int:
    if isinstance(expr, (Num, Var)):
        return 1
    if isinstance(expr, Neg):
        return 1 + expr_depth(expr.operand)
    if isinstance(expr, BinOp):
        return 1 + max(expr_depth(expr.left), expr_depth(expr.right))
    if isinstance(expr, Call):
        return 1 + max(expr_depth(a) for a in expr.args)
    raise TypeError(f"not an Expr node: {expr!r}")


def free_variables(expr: Expr) -> frozenset[str]:
    if isinstance(expr, Num):
        return frozenset()
    if isinstance(expr, Var):
        return frozenset((expr.name,))
    if isinstance(expr, Neg):
        return free_variables(expr.operand)
    if isinstance(expr, BinOp):
        return free_variables(expr.left) | free_variables(expr.right)
    if isinstance(expr, Call):
        out: frozenset[str] = frozenset()
        for a in expr.args:
            out = out | free_variables(a)
        return out
    raise TypeError(f"not an Expr node: {expr!r}")


def substitute(expr: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by subtrees (used e.g. by the sign-flip reduction)."""
    if isinstance(expr, Num):
        return expr
    if isinstance(expr, Var):
        return mapping.get(expr.name, expr)
    if isinstance(expr, Neg):
        return Neg(substitute(expr.operand, mapping))
    if isinstance(expr, BinOp):
        return BinOp(expr.op, substitute(expr.left, mapping), substitute(expr.right, mapping))
    if isinstance(expr, Call):
        return Call(expr.fn, tuple(substitute(a, mapping) for a in expr.args))
    raise TypeError(f"not an Expr node: {expr!r}")


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_NEG_PREC = 3


def _fmt(expr: Expr, parent_prec: int) -> str:
    if isinstance(expr, Num):
        s = repr(expr.value)
        return s
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Neg):
        inner = _fmt(expr.operand, _NEG_PREC)
        s = f"-{inner}"
        return f"({s})" if parent_prec > _NEG_PREC else s
    if isinstance(expr, BinOp):
        p = _PREC[expr.op]
        # left operand of ^ needs parens at equal precedence (right-assoc);
        # right operands of - and / need them too (left-assoc)
        left = _fmt(expr.left, p + 1 if expr.op == "^" else p)
        right = _fmt(expr.right, p if expr.op == "^" else p + 1)
        s = f"{left} {expr.op} {right}" if expr.op in "+-" else f"{left}{expr.op}{right}"
        return f"({s})" if parent_prec > p else s
    if isinstance(expr, Call):
        return f"{expr.fn}({', '.join(_fmt(a, 0) for a in expr.args)})"
    raise TypeError(f"not an Expr node: {expr!r}")


def format_expr(expr: Expr) -> str:
    """Render an AST back to source text; reparsing gives an identical tree."""
    return _fmt(expr, 0)


Value = Union[float, np.ndarray]


def _check_finite(value: Value, node: Expr, detail: str) -> Value:
    ok = np.all(np.isfinite(value)) if isinstance(value, np.ndarray) else np.isfinite(value)
    if not ok:
        raise NumericDomainError(detail, format_expr(node))
    return value


def _eval(expr: Expr, ctx: Mapping[str, Value]) -> Value:
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        try:
            v = ctx[expr.name]
        except KeyError:
            raise NumericDomainError(f"unbound variable '{expr.name}'", expr.name) from None
        return _check_finite(v, expr, f"non-finite binding for '{expr.name}'")
    if isinstance(expr, Neg):
        return -_eval(expr.operand, ctx)
    if isinstance(expr, BinOp):
        a = _eval(expr.left, ctx)
        b = _eval(expr.right, ctx)
        with np.errstate(all="ignore"):
            if expr.op == "+":
                out = a + b
            elif expr.op == "-":
                out = a - b
            elif expr.op == "*":
                out = a * b
            elif expr.op == "/":
                out = np.divide(a, b)
            else:  # ^
                out = np.power(a, b)
        return _check_finite(out, expr, "non-finite result")
    if isinstance(expr, Call):
        vals = [_eval(a, ctx) for a in expr.args]
        with np.errstate(all="ignore"):
            if expr.fn == "min":
                out = np.minimum(vals[0], vals[1])
            elif expr.fn == "max":
                out = np.maximum(vals[0], vals[1])
            elif expr.fn == "pow":
                out = np.power(vals[0], vals[1])
            elif expr.fn == "abs":
                out = np.abs(vals[0])
            elif expr.fn == "exp":
                out = np.exp(vals[0])
            elif expr.fn == "log":
                out = np.log(vals[0])
            else:  # sqrt
                out = np.sqrt(vals[0])
        return _check_finite(out, expr, "non-finite result")
    raise TypeError(f"not an Expr node: {expr!r}")


def evaluate(expr: Expr, ctx: Mapping[str, Value]) -> Value:
    """Evaluate with float or numpy-array bindings.

    Pure: identical context gives a bitwise-identical result.  Raises
    :class:`NumericDomainError` instead of ever propagating NaN/inf.
    """
    return _eval(expr, ctx)
