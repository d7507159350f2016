"""Row-wise arithmetic expression language for feature transforms.

Grammar (binaries left-associative; precedence low to high):

    comparison:  > < >= <= == !=
    additive:    + -
    multiplicative: * /
    power:       ^
    unary minus, then literals, variables, calls, parentheses

Functions: log log1p exp sqrt abs floor ceil (unary); min max (variadic,
at least two); clip(x, lo, hi); if(cond, a, b).

Evaluation is stateless and elementwise. Missing operands propagate to
missing results; any operation whose numeric result is non-finite (division
by zero, log of a non-positive value, overflow) also yields missing, so a
syntactically valid expression never raises on data and never produces an
infinity. Comparisons evaluate to 1.0/0.0.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ExpressionError, ShapeError

UNARY_FUNCTIONS = ("log", "log1p", "exp", "sqrt", "abs", "floor", "ceil")
FUNCTIONS = UNARY_FUNCTIONS + ("min", "max", "clip", "if")

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>>=|<=|==|!=|[-+*/^><(),]))"
)


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Node"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Node", ...]


Node = Num | Var | Unary | Binary | Call


@dataclass(frozen=True)
class Expr:
    root: Node
    variables: tuple[str, ...]
    source: str


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            at = len(text) - len(stripped)
            raise ExpressionError(f"unexpected character {text[at]!r}", at)
        if m.lastgroup == "num":
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group("name"), m.start("name")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, inputs: list[str]):
        self.text = text
        self.inputs = set(inputs)
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.peek()
        if kind != "op" or text != value:
            raise ExpressionError(f"expected {value!r}, found {text or 'end of input'!r}", pos)
        return self.advance()

    def parse(self) -> Node:
        node = self.comparison()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected trailing {text!r}", pos)
        return node

    def _binary_level(self, ops: tuple[str, ...], next_level) -> Node:
        node = next_level()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in ops:
                self.advance()
                node = Binary(text, node, next_level())
            else:
                return node

    def comparison(self) -> Node:
        return self._binary_level((">", "<", ">=", "<=", "==", "!="), self.additive)

    def additive(self) -> Node:
        return self._binary_level(("+", "-"), self.multiplicative)

    def multiplicative(self) -> Node:
        return self._binary_level(("*", "/"), self.unary)

    def unary(self) -> Node:
        # unary minus binds looser than ^, so -a^2 is -(a^2)
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return Unary("-", self.unary())
        return self.power()

    def power(self) -> Node:
        return self._binary_level(("^",), self.power_operand)

    def power_operand(self) -> Node:
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return Unary("-", self.power_operand())
        return self.primary()

    def primary(self) -> Node:
        kind, text, pos = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            nk, nt, _ = self.peek()
            if nk == "op" and nt == "(":
                return self.call(text, pos)
            if text not in self.inputs:
                raise ExpressionError(f"undeclared variable {text!r}", pos)
            return Var(text)
        if kind == "op" and text == "(":
            node = self.comparison()
            self.expect(")")
            return node
        raise ExpressionError(f"unexpected {text or 'end of input'!r}", pos)

    def call(self, func: str, pos: int) -> Node:
        if func not in FUNCTIONS:
            raise ExpressionError(f"unknown function {func!r}", pos)
        self.expect("(")
        args = [self.comparison()]
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text == ",":
                self.advance()
                args.append(self.comparison())
            else:
                break
        self.expect(")")
        n = len(args)
        if func in UNARY_FUNCTIONS and n != 1:
            raise ExpressionError(f"{func} takes exactly 1 argument, got {n}", pos)
        if func in ("min", "max") and n < 2:
            raise ExpressionError(f"{func} takes at least 2 arguments, got {n}", pos)
        if func in ("clip", "if") and n != 3:
            raise ExpressionError(f"{func} takes exactly 3 arguments, got {n}", pos)
        return Call(func, tuple(args))


def parse_expression(text: str, inputs: list[str]) -> Expr:
    """Parse against the declared input columns; errors carry a position."""
    root = _Parser(text, inputs).parse()
    used = tuple(sorted(_collect_vars(root)))
    return Expr(root, used, text)


def _collect_vars(node: Node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Unary):
        return _collect_vars(node.operand)
    if isinstance(node, Binary):
        return _collect_vars(node.left) | _collect_vars(node.right)
    if isinstance(node, Call):
        out: set[str] = set()
        for a in node.args:
            out |= _collect_vars(a)
        return out
    return set()


def _mask_nonfinite(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 0:
        values = values[None]
    bad = ~np.isfinite(values)
    if bad.any():
        values = values.copy()
        values[bad] = np.nan
    return values


def _eval(node: Node, columns: dict[str, np.ndarray], n: int) -> np.ndarray:
    if isinstance(node, Num):
        return np.full(n, node.value)
    if isinstance(node, Var):
        if node.name not in columns:
            raise ShapeError(f"expression variable {node.name!r} not present in input")
        return columns[node.name]
    if isinstance(node, Unary):
        return _mask_nonfinite(-_eval(node.operand, columns, n))
    if isinstance(node, Binary):
        a = _eval(node.left, columns, n)
        b = _eval(node.right, columns, n)
        with np.errstate(all="ignore"):
            if node.op in (">", "<", ">=", "<=", "==", "!="):
                op = {
                    ">": np.greater,
                    "<": np.less,
                    ">=": np.greater_equal,
                    "<=": np.less_equal,
                    "==": np.equal,
                    "!=": np.not_equal,
                }[node.op]
                out = op(a, b).astype(np.float64)
                out[np.isnan(a) | np.isnan(b)] = np.nan
                return out
            if node.op == "+":
                out = a + b
            elif node.op == "-":
                out = a - b
            elif node.op == "*":
                out = a * b
            elif node.op == "/":
                out = a / b
            else:
                out = np.power(a, b)
        return _mask_nonfinite(out)
    if isinstance(node, Call):
        args = [_eval(a, columns, n) for a in node.args]
        with np.errstate(all="ignore"):
            if node.func == "if":
                cond, yes, no = args
                out = np.where(cond != 0, yes, no)
                out[np.isnan(cond)] = np.nan
            elif node.func == "min":
                out = np.minimum.reduce(args)
            elif node.func == "max":
                out = np.maximum.reduce(args)
            elif node.func == "clip":
                out = np.minimum(np.maximum(args[0], args[1]), args[2])
            elif node.func == "abs":
                out = np.abs(args[0])
            elif node.func == "floor":
                out = np.floor(args[0])
            elif node.func == "ceil":
                out = np.ceil(args[0])
            else:
                out = getattr(np, node.func)(args[0])
        return _mask_nonfinite(out)
    raise TypeError(f"unknown node {node!r}")


def evaluate(expr: Expr, columns: dict[str, np.ndarray], n: int) -> np.ndarray:
    """Evaluate over float columns (NaN = missing); returns a float64 vector."""
    return _eval(expr.root, columns, n)
