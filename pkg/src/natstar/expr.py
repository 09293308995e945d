"""A small expression language for metric entries, symbols and test functions.

Grammar (lowest to highest precedence)::

    expr     := term (("+" | "-") term)*
    term     := unary (("*" | "/") unary)*
    unary    := "-" unary | "+" unary | power
    power    := atom ("^" exponent)?
    exponent := "-" exponent | "+" exponent | power       # right associative
    atom     := NUMBER | NAME | NAME "(" expr ")" | "(" expr ")"

So ``-x^2`` is ``-(x^2)`` and ``2^-1`` is allowed.  Implicit multiplication
("2x") is rejected.  Every node keeps the byte span of the text it came from,
which is attached to parse and evaluation errors.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence, Union

from .jets import Jet, JetDomainError, jet_function

__all__ = [
    "SourceSpan",
    "ExprError",
    "LexError",
    "ParseError",
    "UnknownIdentifier",
    "ArityError",
    "UnbalancedParens",
    "ExprDomainError",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "Expr",
    "parse",
    "eval_jet",
    "eval_point",
    "to_string",
    "FUNCTIONS",
    "CONSTANTS",
]

FUNCTIONS = ("sin", "cos", "tan", "exp", "ln", "sqrt")
CONSTANTS = {"pi": math.pi}


@dataclass(frozen=True)
class SourceSpan:
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise ValueError(f"bad span {self.start}..{self.end}")

    def join(self, other: "SourceSpan") -> "SourceSpan":
        return SourceSpan(min(self.start, other.start), max(self.end, other.end))


class ExprError(Exception):
    """Error tied to a location in the source text."""

    kind = "error"

    def __init__(self, message: str, span: SourceSpan, text: str | None = None):
        self.message = message
        self.span = span
        self.text = text
        super().__init__(self._format())

    def _format(self) -> str:
        out = f"{self.kind} at offset {self.span.start}: {self.message}"
        if self.text is not None:
            caret = " " * self.span.start + "^" * max(1, self.span.end - self.span.start)
            out += f"\n  {self.text}\n  {caret}"
        return out


class LexError(ExprError):
    kind = "lexical error"


class ParseError(ExprError):
    kind = "parse error"


class UnknownIdentifier(ParseError):
    kind = "unknown identifier"


class ArityError(ParseError):
    kind = "arity error"


class UnbalancedParens(ParseError):
    kind = "unbalanced parentheses"


class ExprDomainError(ExprError):
    kind = "domain error"


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float
    span: SourceSpan = field(default=SourceSpan(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Var:
    name: str
    index: int
    span: SourceSpan = field(default=SourceSpan(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Neg:
    operand: "Expr"
    span: SourceSpan = field(default=SourceSpan(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    span: SourceSpan = field(default=SourceSpan(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"
    span: SourceSpan = field(default=SourceSpan(0, 0), compare=False, repr=False)


Expr = Union[Num, Var, Neg, BinOp, Call]


# ---------------------------------------------------------------------------
# lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # number | name | op | end
    text: str
    span: SourceSpan


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise LexError(f"unexpected character {text[pos]!r}", SourceSpan(pos, pos + 1), text)
        kind = m.lastgroup
        if kind != "ws":
            tok = Token(kind, m.group(), SourceSpan(m.start(), m.end()))
            if kind == "op" and tok.text == "*" and text.startswith("**", pos):
                raise LexError("'**' is not an operator, use '^'", SourceSpan(pos, pos + 2), text)
            if tokens and kind in ("number", "name") and tokens[-1].kind == "number":
                raise ParseError(
                    "implicit multiplication is not supported, insert '*'", tok.span, text
                )
            tokens.append(tok)
        pos = m.end()
    tokens.append(Token("end", "", SourceSpan(len(text), len(text))))
    return tokens


# ---------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, text: str, variables: Sequence[str]):
        self.text = text
        self.variables = {name: i for i, name in enumerate(variables)}
        self.tokens = tokenize(text)
        self.pos = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        t = self.tokens[self.pos]
        self.pos += 1
        return t

    def at(self, text: str) -> bool:
        return self.tok.kind == "op" and self.tok.text == text

    def error(self, cls, message, span):
        raise cls(message, span, self.text)

    def parse(self) -> Expr:
        if self.tok.kind == "end":
            self.error(ParseError, "empty expression", self.tok.span)
        e = self.expr()
        if self.tok.kind != "end":
            if self.at(")"):
                self.error(UnbalancedParens, "unmatched ')'", self.tok.span)
            self.error(ParseError, f"unexpected {self.tok.text!r}", self.tok.span)
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.at("+") or self.at("-"):
            op = self.advance().text
            right = self.term()
            left = BinOp(op, left, right, left.span.join(right.span))
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.at("*") or self.at("/"):
            op = self.advance().text
            right = self.unary()
            left = BinOp(op, left, right, left.span.join(right.span))
        return left

    def unary(self) -> Expr:
        if self.at("-"):
            start = self.advance().span
            operand = self.unary()
            return Neg(operand, start.join(operand.span))
        if self.at("+"):
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.at("^"):
            self.advance()
            exponent = self.exponent()
            return BinOp("^", base, exponent, base.span.join(exponent.span))
        return base

    def exponent(self) -> Expr:
        if self.at("-"):
            start = self.advance().span
            operand = self.exponent()
            return Neg(operand, start.join(operand.span))
        if self.at("+"):
            self.advance()
            return self.exponent()
        return self.power()

    def atom(self) -> Expr:
        t = self.tok
        if t.kind == "number":
            self.advance()
            return Num(float(t.text), t.span)
        if t.kind == "name":
            self.advance()
            if self.at("("):
                if t.text not in FUNCTIONS:
                    self.error(UnknownIdentifier, f"unknown function {t.text!r}", t.span)
                open_span = self.advance().span
                if self.at(")"):
                    self.error(ArityError, f"{t.text} takes exactly one argument", t.span.join(self.tok.span))
                arg = self.expr()
                if self.at(","):
                    self.error(ArityError, f"{t.text} takes exactly one argument", self.tok.span)
                if not self.at(")"):
                    self.error(UnbalancedParens, "missing ')'", open_span)
                close = self.advance().span
                return Call(t.text, arg, t.span.join(close))
            if t.text in FUNCTIONS:
                self.error(ArityError, f"function {t.text!r} needs an argument in parentheses", t.span)
            if t.text in self.variables:
                return Var(t.text, self.variables[t.text], t.span)
            if t.text in CONSTANTS:
                return Num(CONSTANTS[t.text], t.span)
            self.error(UnknownIdentifier, f"unknown identifier {t.text!r}", t.span)
        if self.at("("):
            open_span = self.advance().span
            if self.at(")"):
                self.error(ParseError, "empty parentheses", open_span.join(self.tok.span))
            inner = self.expr()
            if not self.at(")"):
                self.error(UnbalancedParens, "missing ')'", open_span)
            self.advance()
            return inner
        if t.kind == "end":
            self.error(ParseError, "unexpected end of input", t.span)
        if self.at(")"):
            self.error(UnbalancedParens, "unmatched ')'", t.span)
        self.error(ParseError, f"unexpected {t.text!r}", t.span)


def parse(text: str, variables: Sequence[str]) -> Expr:
    """Parse ``text`` into an AST over the given chart variables."""
    seen = set()
    for name in variables:
        if name in FUNCTIONS or name in CONSTANTS or name in seen:
            raise ValueError(f"variable name {name!r} is reserved or repeated")
        seen.add(name)
    return _Parser(text, list(variables)).parse()


# ---------------------------------------------------------------------------
# printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return _PREC["neg"]
    return 5


def to_string(e: Expr) -> str:
    """Canonical text form; parsing it gives back a structurally equal AST."""
    if isinstance(e, Num):
        v = float(e.value)
        return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({to_string(e.arg)})"
    if isinstance(e, Neg):
        inner = to_string(e.operand)
        # -(-x) and -(x+y) need parentheses; -(x^2) does not
        return f"-({inner})" if _prec(e.operand) < _PREC["^"] else f"-{inner}"
    p = _PREC[e.op]
    left, right = to_string(e.left), to_string(e.right)
    if e.op == "^":
        if _prec(e.left) <= p:
            left = f"({left})"
        if _prec(e.right) < p:
            right = f"({right})"
    else:
        if _prec(e.left) < p:
            left = f"({left})"
        if _prec(e.right) <= p:
            right = f"({right})"
    return f"{left}{e.op}{right}"


# ---------------------------------------------------------------------------
# evaluation


def _integer_exponent(e: Expr) -> int | None:
    if isinstance(e, Num) and float(e.value).is_integer():
        return int(e.value)
    if isinstance(e, Neg):
        k = _integer_exponent(e.operand)
        return None if k is None else -k
    return None


def eval_jet(e: Expr, point: Sequence[float], order: int, text: str | None = None) -> Jet:
    """Taylor expansion of ``e`` at ``point`` with ``valid_order == order``."""
    point = [float(v) for v in point]
    variables = Jet.variables(point, order)
    n = len(point)

    def rec(node: Expr) -> Jet:
        if isinstance(node, Num):
            return Jet.constant(n, node.value, order)
        if isinstance(node, Var):
            if node.index >= n:
                raise ValueError(f"point has {n} coordinates, variable {node.name!r} needs more")
            return variables[node.index]
        if isinstance(node, Neg):
            return -rec(node.operand)
        if isinstance(node, Call):
            arg = rec(node.arg)
            try:
                return jet_function(node.func, arg)
            except JetDomainError as exc:
                raise ExprDomainError(f"{node.func}: {exc}", node.span, text) from None
        if node.op == "^":
            base = rec(node.left)
            k = _integer_exponent(node.right)
            if k is not None:
                if k < 0 and base.value == 0:
                    raise ExprDomainError("negative power of zero", node.left.span, text)
                return base**k
            if base.value <= 0:
                raise ExprDomainError(
                    "non-integer power needs a positive base", node.left.span, text
                )
            return jet_function("exp", rec(node.right) * jet_function("ln", base))
        left, right = rec(node.left), rec(node.right)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        if right.value == 0:
            raise ExprDomainError("division by zero", node.right.span, text)
        return left / right

    return rec(e)


_FLOAT_FUNCS = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "ln": math.log,
    "sqrt": math.sqrt,
}


def eval_point(e: Expr, point: Sequence[float]) -> float:
    """Plain floating point evaluation (used by finite-difference oracles)."""
    if isinstance(e, Num):
        return float(e.value)
    if isinstance(e, Var):
        return float(point[e.index])
    if isinstance(e, Neg):
        return -eval_point(e.operand, point)
    if isinstance(e, Call):
        return _FLOAT_FUNCS[e.func](eval_point(e.arg, point))
    a, b = eval_point(e.left, point), eval_point(e.right, point)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "/":
        return a / b
    k = _integer_exponent(e.right)
    return a**k if k is not None else math.exp(b * math.log(a))
