"""Scalar expression trees with exact symbolic differentiation.

Nodes are immutable and hash-consed: building the same structure twice
returns the same object, so structural equality is identity and shared
subexpressions are stored once.  Two construction layers exist:

* the node classes (``Add(a, b)`` etc.) build exactly what they are given,
  which is what the parser uses;
* the lower-case helpers (``add``, ``mul``, ...) apply a handful of local
  rewrites (``0*e -> 0``, ``e+0 -> e``, ``1*e -> e``, folding of
  constant-only operations) and are what :func:`diff` uses.

Grammar (see ``docs/grammar.md``)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' INT)?
    primary := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'
"""

from __future__ import annotations

import math
import re
import threading
import weakref
from typing import Iterable, Mapping

from .errors import DivisionNearZero, DomainError, ExprSyntaxError, UnknownSymbol

__all__ = [
    "Expr", "Constant", "Var", "Neg", "Add", "Sub", "Mul", "Div", "PowInt",
    "Sin", "Cos", "Exp", "Tanh", "FUNCTIONS", "DIV_GUARD",
    "parse", "diff", "evaluate", "to_string", "free_vars", "substitute",
    "count_nodes", "topo_order",
    "const", "neg", "add", "sub", "mul", "div", "powi", "sin", "cos", "exp",
    "tanh", "dot", "total",
]

DIV_GUARD = 1e-12

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_RESERVED = frozenset({"sin", "cos", "exp", "tanh"})

_table: "weakref.WeakValueDictionary[tuple, Expr]" = weakref.WeakValueDictionary()
_lock = threading.Lock()


class Expr:
    """Base class of all expression nodes."""

    __slots__ = ("args", "value", "__weakref__")
    arity = 0
    precedence = 5

    def __new__(cls, *params):
        args, value = cls._normalize(params)
        key = (cls, value, *map(id, args))
        with _lock:
            node = _table.get(key)
            if node is None:
                node = object.__new__(cls)
                object.__setattr__(node, "args", args)
                object.__setattr__(node, "value", value)
                _table[key] = node
        return node

    @classmethod
    def _normalize(cls, params):
        if len(params) != cls.arity:
            raise TypeError(f"{cls.__name__} takes {cls.arity} operand(s)")
        for p in params:
            if not isinstance(p, Expr):
                raise TypeError(f"operand of {cls.__name__} must be Expr, got {type(p).__name__}")
        return tuple(params), None

    def __setattr__(self, name, value):
        raise AttributeError("Expr nodes are immutable")

    def __reduce__(self):
        return (type(self), self._params())

    def _params(self):
        return self.args

    def __repr__(self):
        inner = ", ".join(repr(p) for p in self._params())
        return f"{type(self).__name__}({inner})"

    def __str__(self):
        return to_string(self)

    # operator sugar builds simplified nodes
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return powi(self, k)


class Constant(Expr):
    __slots__ = ()

    @classmethod
    def _normalize(cls, params):
        (v,) = params
        v = float(v)
        if not math.isfinite(v):
            raise DomainError(f"non-finite constant {v!r}")
        # keep 0.0 and -0.0 apart
        return (), (v, math.copysign(1.0, v))

    def _params(self):
        return (self.value[0],)

    @property
    def number(self) -> float:
        return self.value[0]

    @property
    def precedence(self):
        return 3 if math.copysign(1.0, self.value[0]) < 0 else 5


class Var(Expr):
    __slots__ = ()

    @classmethod
    def _normalize(cls, params):
        (name,) = params
        if not isinstance(name, str) or not _NAME_RE.fullmatch(name) or name in _RESERVED:
            raise ValueError(f"invalid variable name {name!r}")
        return (), name

    def _params(self):
        return (self.value,)

    @property
    def name(self) -> str:
        return self.value


class Neg(Expr):
    __slots__ = ()
    arity = 1
    precedence = 3


class _Binary(Expr):
    __slots__ = ()
    arity = 2
    symbol = "?"


class Add(_Binary):
    __slots__ = ()
    precedence = 1
    symbol = "+"


class Sub(_Binary):
    __slots__ = ()
    precedence = 1
    symbol = "-"


class Mul(_Binary):
    __slots__ = ()
    precedence = 2
    symbol = "*"


class Div(_Binary):
    __slots__ = ()
    precedence = 2
    symbol = "/"


class PowInt(Expr):
    """Integer power ``base ^ k`` with ``k >= 0``."""

    __slots__ = ()
    precedence = 4

    @classmethod
    def _normalize(cls, params):
        base, k = params
        if not isinstance(base, Expr):
            raise TypeError("PowInt base must be Expr")
        if isinstance(k, bool) or int(k) != k or k < 0:
            raise ValueError(f"PowInt exponent must be a non-negative integer, got {k!r}")
        return (base,), int(k)

    def _params(self):
        return (self.args[0], self.value)

    @property
    def exponent(self) -> int:
        return self.value


class _Func(Expr):
    __slots__ = ()
    arity = 1
    fname = "?"


class Sin(_Func):
    __slots__ = ()
    fname = "sin"


class Cos(_Func):
    __slots__ = ()
    fname = "cos"


class Exp(_Func):
    __slots__ = ()
    fname = "exp"


class Tanh(_Func):
    __slots__ = ()
    fname = "tanh"


FUNCTIONS = {cls.fname: cls for cls in (Sin, Cos, Exp, Tanh)}

_MATH = {Sin: math.sin, Cos: math.cos, Exp: math.exp, Tanh: math.tanh}

ZERO = Constant(0.0)
ONE = Constant(1.0)


def _lift(v) -> Expr:
    return v if isinstance(v, Expr) else Constant(v)


def _is_const(e, v=None) -> bool:
    return isinstance(e, Constant) and (v is None or e.number == v)


# --- simplifying constructors ----------------------------------------------

def const(v) -> Constant:
    return Constant(v)


def _fold(fn, *vals) -> Expr | None:
    try:
        out = fn(*vals)
    except (OverflowError, ValueError, ZeroDivisionError):
        return None
    return Constant(out) if math.isfinite(out) else None


def neg(a: Expr) -> Expr:
    if isinstance(a, Constant):
        return Constant(-a.number)
    return Neg(a)


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if isinstance(a, Constant) and isinstance(b, Constant):
        return _fold(float.__add__, a.number, b.number) or Add(a, b)
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    if isinstance(a, Constant) and isinstance(b, Constant):
        return _fold(float.__sub__, a.number, b.number) or Sub(a, b)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if isinstance(a, Constant) and isinstance(b, Constant):
        return _fold(float.__mul__, a.number, b.number) or Mul(a, b)
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 1.0):
        return a
    if isinstance(a, Constant) and isinstance(b, Constant) and abs(b.number) >= DIV_GUARD:
        return _fold(float.__truediv__, a.number, b.number) or Div(a, b)
    return Div(a, b)


def powi(a: Expr, k: int) -> Expr:
    if k == 0:
        return ONE
    if k == 1:
        return a
    if isinstance(a, Constant):
        return _fold(lambda x: x ** int(k), a.number) or PowInt(a, k)
    return PowInt(a, k)


def _func(cls, a: Expr) -> Expr:
    if isinstance(a, Constant):
        return _fold(_MATH[cls], a.number) or cls(a)
    return cls(a)


def sin(a):
    return _func(Sin, _lift(a))


def cos(a):
    return _func(Cos, _lift(a))


def exp(a):
    return _func(Exp, _lift(a))


def tanh(a):
    return _func(Tanh, _lift(a))


def total(terms: Iterable[Expr]) -> Expr:
    out: Expr = ZERO
    for t in terms:
        out = add(out, t)
    return out


def dot(a: Iterable[Expr], b: Iterable[Expr]) -> Expr:
    return total(mul(x, y) for x, y in zip(a, b))


# --- traversal ---------------------------------------------------------------

def topo_order(roots: Iterable[Expr]) -> list[Expr]:
    """Unique nodes reachable from ``roots``, children before parents."""
    seen: set[int] = set()
    order: list[Expr] = []
    for root in roots:
        if id(root) in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for child in reversed(node.args):
                if id(child) not in seen:
                    stack.append((child, False))
    return order


def count_nodes(roots: Iterable[Expr]) -> int:
    return len(topo_order(roots))


def free_vars(e: Expr) -> frozenset[str]:
    return frozenset(n.name for n in topo_order([e]) if isinstance(n, Var))


def substitute(e: Expr, mapping: Mapping[str, Expr], _memo=None) -> Expr:
    """Replace variables by expressions, rebuilding with simplification.

    A memo shared across calls maps ``id(node)`` to ``(node, result)``; the
    node is kept so its id cannot be recycled while the memo lives.
    """
    memo = {} if _memo is None else _memo
    for node in topo_order([e]):
        if id(node) in memo:
            continue
        if isinstance(node, Var):
            out = mapping.get(node.name, node)
        elif isinstance(node, Constant):
            out = node
        else:
            out = _rebuild(node, [memo[id(c)][1] for c in node.args])
        memo[id(node)] = (node, out)
    return memo[id(e)][1]


def _rebuild(node: Expr, args: list[Expr]) -> Expr:
    if all(a is b for a, b in zip(args, node.args)):
        return node
    if isinstance(node, Neg):
        return neg(args[0])
    if isinstance(node, Add):
        return add(*args)
    if isinstance(node, Sub):
        return sub(*args)
    if isinstance(node, Mul):
        return mul(*args)
    if isinstance(node, Div):
        return div(*args)
    if isinstance(node, PowInt):
        return powi(args[0], node.exponent)
    if isinstance(node, _Func):
        return _func(type(node), args[0])
    raise TypeError(f"unexpected node {node!r}")


# --- differentiation ---------------------------------------------------------

def diff(e: Expr, v: str, _memo=None) -> Expr:
    """Symbolic partial derivative of ``e`` with respect to variable ``v``.

    Unchanged subtrees of ``e`` are reused in the result.  Pass a shared dict
    as ``_memo`` to reuse work across several calls for the same ``v``; it
    maps ``id(node)`` to ``(node, derivative)`` so ids stay pinned.
    """
    memo = {} if _memo is None else _memo
    for node in topo_order([e]):
        if id(node) in memo:
            continue
        memo[id(node)] = (node, _diff_node(node, v, memo))
    return memo[id(e)][1]


def _diff_node(node: Expr, v: str, memo) -> Expr:
    if isinstance(node, Constant):
        return ZERO
    if isinstance(node, Var):
        return ONE if node.name == v else ZERO
    d = [memo[id(c)][1] for c in node.args]
    a = node.args
    if isinstance(node, Neg):
        return neg(d[0])
    if isinstance(node, Add):
        return add(d[0], d[1])
    if isinstance(node, Sub):
        return sub(d[0], d[1])
    if isinstance(node, Mul):
        return add(mul(d[0], a[1]), mul(a[0], d[1]))
    if isinstance(node, Div):
        if _is_const(d[1], 0.0):
            return div(d[0], a[1])
        quotient_term = div(mul(a[0], d[1]), powi(a[1], 2))
        if _is_const(d[0], 0.0):
            return neg(quotient_term)
        return sub(div(d[0], a[1]), quotient_term)
    if isinstance(node, PowInt):
        k = node.exponent
        if _is_const(d[0], 0.0) or k == 0:
            return ZERO
        return mul(d[0], mul(Constant(k), powi(a[0], k - 1)))
    if _is_const(d[0], 0.0):
        return ZERO
    if isinstance(node, Sin):
        return mul(d[0], cos(a[0]))
    if isinstance(node, Cos):
        return mul(d[0], neg(sin(a[0])))
    if isinstance(node, Exp):
        return mul(d[0], node)
    if isinstance(node, Tanh):
        return mul(d[0], sub(ONE, powi(node, 2)))
    raise TypeError(f"unexpected node {node!r}")


# --- evaluation --------------------------------------------------------------

def evaluate(e: Expr, env: Mapping[str, float]) -> float:
    """Tree-walking IEEE double evaluation.

    Raises :class:`DivisionNearZero` when a denominator is below the guard
    and :class:`DomainError` on any non-finite intermediate.
    """
    vals: dict[int, float] = {}
    for node in topo_order([e]):
        if isinstance(node, Constant):
            out = node.number
        elif isinstance(node, Var):
            try:
                out = float(env[node.name])
            except KeyError:
                raise UnknownSymbol(node.name) from None
        else:
            x = [vals[id(c)] for c in node.args]
            try:
                out = _apply(node, x)
            except OverflowError:
                raise DomainError(f"overflow evaluating {type(node).__name__}") from None
        if not math.isfinite(out):
            raise DomainError(f"non-finite value in {type(node).__name__}")
        vals[id(node)] = out
    return vals[id(e)]


def _apply(node: Expr, x: list[float]) -> float:
    if isinstance(node, Neg):
        return -x[0]
    if isinstance(node, Add):
        return x[0] + x[1]
    if isinstance(node, Sub):
        return x[0] - x[1]
    if isinstance(node, Mul):
        return x[0] * x[1]
    if isinstance(node, Div):
        if abs(x[1]) < DIV_GUARD:
            raise DivisionNearZero(f"|denominator| = {abs(x[1]):.3g} below guard {DIV_GUARD}")
        return x[0] / x[1]
    if isinstance(node, PowInt):
        return x[0] ** node.exponent
    return _MATH[type(node)](x[0])


# --- printing ----------------------------------------------------------------

def to_string(e: Expr) -> str:
    """Infix text that :func:`parse` maps back to the identical node."""
    out: dict[int, str] = {}
    for node in topo_order([e]):
        out[id(node)] = _format(node, out)
    return out[id(e)]


def _wrap(child: Expr, text: dict, min_prec: int) -> str:
    s = text[id(child)]
    return f"({s})" if child.precedence < min_prec else s


def _format(node: Expr, text: dict) -> str:
    if isinstance(node, Constant):
        return repr(node.number)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        (a,) = node.args
        if isinstance(a, Constant):
            # "-8" would read back as the literal Constant(-8)
            return f"-({text[id(a)]})"
        return "-" + _wrap(a, text, 3)
    if isinstance(node, _Binary):
        a, b = node.args
        lp = node.precedence
        return f"{_wrap(a, text, lp)} {node.symbol} {_wrap(b, text, lp + 1)}"
    if isinstance(node, PowInt):
        return f"{_wrap(node.args[0], text, 5)}^{node.exponent}"
    if isinstance(node, _Func):
        return f"{node.fname}({text[id(node.args[0])]})"
    raise TypeError(node)


# --- parsing -----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()]))"
)


class _Parser:
    def __init__(self, text: str, symbols):
        self.text = text
        self.symbols = symbols
        self.tokens = self._tokenize(text)
        self.i = 0

    def _tokenize(self, text):
        tokens = []
        pos = 0
        while True:
            while pos < len(text) and text[pos].isspace():
                pos += 1
            if pos >= len(text):
                break
            m = _TOKEN_RE.match(text, pos)
            if m is None or m.end() == pos:
                raise ExprSyntaxError(f"unexpected character {text[pos]!r}", text, pos,
                                      ("number", "name", "operator"))
            kind = m.lastgroup
            start = m.start(kind)
            tokens.append((kind, m.group(kind), start))
            pos = m.end()
        tokens.append(("end", "", len(text)))
        return tokens

    def peek(self, offset=0):
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, expected, tok=None):
        kind, val, pos = tok or self.peek()
        what = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(f"unexpected {what}", self.text, pos, expected)

    def expect_op(self, op):
        tok = self.peek()
        if tok[0] != "op" or tok[1] != op:
            self.fail((repr(op),))
        return self.take()

    def parse(self) -> Expr:
        e = self.expr()
        if self.peek()[0] != "end":
            self.fail(("operator", "end of input"))
        return e

    def expr(self):
        left = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            right = self.term()
            left = Add(left, right) if op == "+" else Sub(left, right)
        return left

    def term(self):
        left = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            right = self.unary()
            left = Mul(left, right) if op == "*" else Div(left, right)
        return left

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            nxt, after = self.peek(), self.peek(1)
            # a signed literal is a single constant unless it is a power base
            if nxt[0] == "num" and not (after[0] == "op" and after[1] == "^"):
                self.take()
                return Constant(-float(nxt[1]))
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.primary()
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "^":
            self.take()
            k = self.peek()
            if k[0] != "num" or not k[1].isdigit():
                self.fail(("non-negative integer exponent",), k)
            self.take()
            return PowInt(base, int(k[1]))
        return base

    def primary(self):
        tok = self.peek()
        kind, val, pos = tok
        if kind == "num":
            self.take()
            return Constant(float(val))
        if kind == "name":
            self.take()
            nxt = self.peek()
            if nxt[0] == "op" and nxt[1] == "(":
                if val not in FUNCTIONS:
                    raise UnknownSymbol(val)
                self.take()
                arg = self.expr()
                self.expect_op(")")
                return FUNCTIONS[val](arg)
            if val in FUNCTIONS:
                self.fail(("'('",))
            if self.symbols is not None and val not in self.symbols:
                raise UnknownSymbol(val)
            return Var(val)
        if kind == "op" and val == "(":
            self.take()
            e = self.expr()
            self.expect_op(")")
            return e
        self.fail(("number", "name", "'('"))


def parse(text: str, symbols: Iterable[str] | None = None) -> Expr:
    """Parse infix ``text``; names must belong to ``symbols`` when given."""
    table = None if symbols is None else frozenset(symbols)
    return _Parser(text, table).parse()
