"""Expression trees over chart coordinates.

Grammar (whitespace-insensitive)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom (('^' | '**') unary)?
    atom   := NUMBER | IDENT | FUNC '(' expr ')' | '(' expr ')'
    FUNC   := sin | cos | exp | log | sqrt | tanh

Power binds tighter than unary minus (``-x^2 == -(x^2)``) and is
right-associative; ``*``, ``/``, ``+``, ``-`` are left-associative.

Nodes are immutable and hashable.  Constructors in this module perform a
light normalization (constant folding, 0/1 elimination); no attempt is made
at general simplification.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "tanh")


class ExpressionError(ValueError):
    """Base class for parse and evaluation errors."""


class ParseError(ExpressionError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class UnknownSymbolError(ExpressionError):
    def __init__(self, name: str):
        super().__init__(f"unknown symbol {name!r}")
        self.name = name


class DomainError(ExpressionError, ArithmeticError):
    pass


# ---------------------------------------------------------------- nodes


class Node:
    __slots__ = ()
    prec = 5

    def __str__(self) -> str:
        return to_string(self)


def _hash_init(self, *parts):
    object.__setattr__(self, "_h", hash((type(self).__name__,) + parts))


@dataclass(frozen=True, eq=False)
class Num(Node):
    value: float
    _h: int = field(default=0, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        _hash_init(self, self.value)

    prec = 5

    def __eq__(self, other):
        return type(other) is Num and other.value == self.value

    def __hash__(self):
        return self._h


@dataclass(frozen=True, eq=False)
class Sym(Node):
    name: str
    _h: int = field(default=0, repr=False, compare=False)

    def __post_init__(self):
        _hash_init(self, self.name)

    def __eq__(self, other):
        return type(other) is Sym and other.name == self.name

    def __hash__(self):
        return self._h


@dataclass(frozen=True, eq=False)
class BinOp(Node):
    op: str
    left: Node
    right: Node
    _h: int = field(default=0, repr=False, compare=False)

    def __post_init__(self):
        _hash_init(self, self.op, self.left._h, self.right._h)

    @property
    def prec(self):
        return {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}[self.op]

    def __eq__(self, other):
        return (
            type(other) is BinOp
            and other._h == self._h
            and other.op == self.op
            and other.left == self.left
            and other.right == self.right
        )

    def __hash__(self):
        return self._h


@dataclass(frozen=True, eq=False)
class Neg(Node):
    arg: Node
    _h: int = field(default=0, repr=False, compare=False)

    def __post_init__(self):
        _hash_init(self, self.arg._h)

    prec = 3

    def __eq__(self, other):
        return type(other) is Neg and other.arg == self.arg

    def __hash__(self):
        return self._h


@dataclass(frozen=True, eq=False)
class Func(Node):
    name: str
    arg: Node
    _h: int = field(default=0, repr=False, compare=False)

    def __post_init__(self):
        _hash_init(self, self.name, self.arg._h)

    def __eq__(self, other):
        return type(other) is Func and other.name == self.name and other.arg == self.arg

    def __hash__(self):
        return self._h


ZERO = Num(0.0)
ONE = Num(1.0)


def is_num(node: Node, value: float | None = None) -> bool:
    return type(node) is Num and (value is None or node.value == value)


# ---------------------------------------------------------------- builders


def _folded(value: float, op: str, a: Node, b: Node) -> Node:
    # constants that overflow stay symbolic so printing round-trips
    return Num(value) if math.isfinite(value) else BinOp(op, a, b)


def add(a: Node, b: Node) -> Node:
    if is_num(a) and is_num(b):
        return _folded(a.value + b.value, "+", a, b)
    if is_num(a, 0.0):
        return b
    if is_num(b, 0.0):
        return a
    if type(b) is Neg:
        return sub(a, b.arg)
    if is_num(b) and b.value < 0:
        return sub(a, Num(-b.value))
    if type(a) is BinOp and a.op == "-" and a.right == b:
        return a.left
    return BinOp("+", a, b)


def sub(a: Node, b: Node) -> Node:
    if is_num(a) and is_num(b):
        return _folded(a.value - b.value, "-", a, b)
    if is_num(b, 0.0):
        return a
    if is_num(a, 0.0):
        return neg(b)
    if a == b:
        return ZERO
    if type(b) is Neg:
        return add(a, b.arg)
    if is_num(b) and b.value < 0:
        return add(a, Num(-b.value))
    if type(a) is BinOp and a.op == "+":
        if a.right == b:
            return a.left
        if a.left == b:
            return a.right
    return BinOp("-", a, b)


def mul(a: Node, b: Node) -> Node:
    if is_num(a) and is_num(b):
        return _folded(a.value * b.value, "*", a, b)
    if is_num(a, 0.0) or is_num(b, 0.0):
        return ZERO
    if is_num(a, 1.0):
        return b
    if is_num(b, 1.0):
        return a
    if is_num(a, -1.0):
        return neg(b)
    if is_num(b, -1.0):
        return neg(a)
    if type(a) is Neg:
        return neg(mul(a.arg, b))
    if type(b) is Neg:
        return neg(mul(a, b.arg))
    if is_num(a) and a.value < 0:
        return neg(mul(Num(-a.value), b))
    if is_num(b) and b.value < 0:
        return neg(mul(Num(-b.value), a))
    if is_num(b):
        return mul(b, a)
    cb, rb = _coefficient(b)
    if is_num(a):
        return mul(Num(a.value * cb), rb) if cb != 1.0 else BinOp("*", a, b)
    ca, ra = _coefficient(a)
    if ca != 1.0 or cb != 1.0:
        return mul(Num(ca * cb), mul(ra, rb))
    if a == b:
        return power(a, Num(2.0))
    return BinOp("*", a, b)


def _coefficient(node: Node) -> tuple[float, Node]:
    """Split ``c*rest`` into ``(c, rest)``; other nodes have coefficient 1."""
    if type(node) is BinOp and node.op == "*" and is_num(node.left):
        return node.left.value, node.right
    return 1.0, node


def div(a: Node, b: Node) -> Node:
    if is_num(b, 0.0):
        # kept symbolic; evaluation reports the domain error
        return BinOp("/", a, b)
    if is_num(a) and is_num(b):
        return _folded(a.value / b.value, "/", a, b)
    if is_num(a, 0.0):
        return ZERO
    if is_num(b, 1.0):
        return a
    if a == b:
        return ONE
    return BinOp("/", a, b)


def power(a: Node, b: Node) -> Node:
    if is_num(b, 0.0):
        return ONE
    if is_num(b, 1.0):
        return a
    if is_num(a) and is_num(b):
        if a.value >= 0 or float(b.value).is_integer():
            if not (a.value == 0 and b.value < 0):
                try:
                    return _folded(a.value**b.value, "^", a, b)
                except OverflowError:
                    pass
    return BinOp("^", a, b)


def neg(a: Node) -> Node:
    if is_num(a):
        return Num(-a.value)
    if type(a) is Neg:
        return a.arg
    return Neg(a)


def func(name: str, a: Node) -> Node:
    if name not in FUNCTIONS:
        raise UnknownSymbolError(name)
    if is_num(a):
        v = a.value
        try:
            if name == "sin":
                return Num(math.sin(v))
            if name == "cos":
                return Num(math.cos(v))
            if name == "exp":
                return Num(math.exp(v))
            if name == "tanh":
                return Num(math.tanh(v))
            if name == "log" and v > 0:
                return Num(math.log(v))
            if name == "sqrt" and v >= 0:
                return Num(math.sqrt(v))
        except OverflowError:
            pass
    return Func(name, a)


_BUILD = {"+": add, "-": sub, "*": mul, "/": div, "^": power}


# ---------------------------------------------------------------- parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()]))"
)


def _tokenize(text: str):
    raw = text.encode("utf-8")
    tokens = []
    pos = 0
    # byte offsets are reported; the grammar itself is pure ASCII
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip() == "":
                break
            stripped = len(text[pos:]) - len(text[pos:].lstrip())
            bad = pos + stripped
            raise ParseError(f"unexpected character {text[bad]!r}", len(text[:bad].encode("utf-8")))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), len(text[:start].encode("utf-8"))))
        pos = m.end()
    tokens.append(("end", "", len(raw)))
    return tokens


class _Parser:
    def __init__(self, text: str, symbols):
        self.tokens = _tokenize(text)
        self.i = 0
        self.symbols = symbols

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, off = self.take()
        if val != value:
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}", off)

    def parse(self) -> Node:
        node = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", off)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = _BUILD[op](node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = _BUILD[op](node, self.unary())
        return node

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return neg(self.unary())
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] in ("^", "**"):
            self.take()
            return power(base, self.unary())
        return base

    def atom(self):
        kind, val, off = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "id":
            if val in FUNCTIONS:
                if self.peek()[1] != "(":
                    raise ParseError(f"function {val!r} needs an argument", self.peek()[2])
                self.take()
                arg = self.expr()
                self.expect(")")
                return func(val, arg)
            if self.symbols is not None and val not in self.symbols:
                raise UnknownSymbolError(val)
            return Sym(val)
        if val == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ParseError(f"unexpected {val or 'end of input'!r}", off)


def parse(text: str, symbols=None) -> Node:
    """Parse ``text``; if ``symbols`` is given, identifiers must belong to it."""
    return _Parser(text, None if symbols is None else frozenset(symbols)).parse()


# ---------------------------------------------------------------- printing


def _fmt_num(v: float) -> str:
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def to_string(node: Node) -> str:
    t = type(node)
    if t is Num:
        return _fmt_num(node.value)
    if t is Sym:
        return node.name
    if t is Func:
        return f"{node.name}({to_string(node.arg)})"
    if t is Neg:
        inner = node.arg
        s = to_string(inner)
        # -(a+b), -(-a); negative literals also wrapped to keep the round trip stable
        if inner.prec < 3 or type(inner) is Neg or (type(inner) is Num and inner.value < 0):
            s = f"({s})"
        return f"-{s}"
    op = node.op
    p = node.prec
    ls, rs = to_string(node.left), to_string(node.right)
    if op == "^":
        if node.left.prec <= 4 or _negative_literal(node.left):
            ls = f"({ls})"
        if node.right.prec < 4 or _negative_literal(node.right):
            rs = f"({rs})"
        return f"{ls}^{rs}"
    if node.left.prec < p or _negative_literal(node.left) and p > 1:
        ls = f"({ls})"
    if node.right.prec <= p or _negative_literal(node.right):
        rs = f"({rs})"
    return f"{ls} {op} {rs}" if p == 1 else f"{ls}*{rs}" if op == "*" else f"{ls}/{rs}"


def _negative_literal(node: Node) -> bool:
    return type(node) is Num and node.value < 0


# ---------------------------------------------------------------- calculus


@lru_cache(maxsize=200_000)
def diff(node: Node, var: str) -> Node:
    t = type(node)
    if t is Num:
        return ZERO
    if t is Sym:
        return ONE if node.name == var else ZERO
    if t is Neg:
        return neg(diff(node.arg, var))
    if t is Func:
        u = node.arg
        du = diff(u, var)
        if is_num(du, 0.0):
            return ZERO
        name = node.name
        if name == "sin":
            outer = func("cos", u)
        elif name == "cos":
            outer = neg(func("sin", u))
        elif name == "exp":
            outer = node
        elif name == "log":
            return div(du, u)
        elif name == "sqrt":
            return div(du, mul(Num(2.0), node))
        else:  # tanh
            outer = sub(ONE, power(node, Num(2.0)))
        return mul(outer, du)
    a, b = node.left, node.right
    da, db = diff(a, var), diff(b, var)
    op = node.op
    if op == "+":
        return add(da, db)
    if op == "-":
        return sub(da, db)
    if op == "*":
        return add(mul(da, b), mul(a, db))
    if op == "/":
        if is_num(db, 0.0):
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), power(b, Num(2.0)))
    # power
    if is_num(db, 0.0):
        if is_num(da, 0.0):
            return ZERO
        return mul(mul(b, power(a, sub(b, ONE))), da)
    # general exponent: d(a^b) = a^b (b' log a + b a'/a)
    return mul(node, add(mul(db, func("log", a)), div(mul(b, da), a)))


def substitute(node: Node, values: Mapping[str, Node]) -> Node:
    t = type(node)
    if t is Num:
        return node
    if t is Sym:
        return values.get(node.name, node)
    if t is Neg:
        return neg(substitute(node.arg, values))
    if t is Func:
        return func(node.name, substitute(node.arg, values))
    return _BUILD[node.op](substitute(node.left, values), substitute(node.right, values))


def symbols(node: Node) -> set[str]:
    t = type(node)
    if t is Num:
        return set()
    if t is Sym:
        return {node.name}
    if t in (Neg, Func):
        return symbols(node.arg)
    return symbols(node.left) | symbols(node.right)


# ---------------------------------------------------------------- evaluation


def evaluate(node: Node, env: Mapping[str, np.ndarray], shape=()) -> np.ndarray:
    """Vectorized IEEE evaluation; domain violations raise :class:`DomainError`."""
    with np.errstate(all="ignore"):
        out = _eval(node, env, {})
    return np.broadcast_to(np.asarray(out, dtype=float), shape).copy() if shape else out


def _eval(node, env, memo):
    key = id(node)
    hit = memo.get(key)
    if hit is not None:
        return hit[1]
    t = type(node)
    if t is Num:
        val = node.value
    elif t is Sym:
        try:
            val = env[node.name]
        except KeyError:
            raise UnknownSymbolError(node.name) from None
    elif t is Neg:
        val = -_eval(node.arg, env, memo)
    elif t is Func:
        x = _eval(node.arg, env, memo)
        name = node.name
        if name == "log" and np.any(np.asarray(x) <= 0):
            raise DomainError(f"log of non-positive value in {to_string(node)}")
        if name == "sqrt" and np.any(np.asarray(x) < 0):
            raise DomainError(f"sqrt of negative value in {to_string(node)}")
        val = getattr(np, name)(x)
    else:
        a = _eval(node.left, env, memo)
        b = _eval(node.right, env, memo)
        op = node.op
        if op == "+":
            val = a + b
        elif op == "-":
            val = a - b
        elif op == "*":
            val = a * b
        elif op == "/":
            if np.any(np.asarray(b) == 0):
                raise DomainError(f"division by zero in {to_string(node)}")
            val = a / b
        else:
            a_arr, b_arr = np.asarray(a), np.asarray(b)
            if np.any((a_arr < 0) & (b_arr != np.round(b_arr))):
                raise DomainError(f"negative base with non-integer exponent in {to_string(node)}")
            if np.any((a_arr == 0) & (b_arr < 0)):
                raise DomainError(f"zero to a negative power in {to_string(node)}")
            if is_num(node.right, 2.0):
                val = a * a
            else:
                val = a_arr**b_arr
    if not np.all(np.isfinite(val)):
        raise DomainError(f"non-finite value in {to_string(node)}")
    memo[key] = (node, val)
    return val
