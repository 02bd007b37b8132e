"""Elementary log-exp expressions.

An expression is an immutable tree (possibly with shared subtrees) built from
constants, input variables, affine maps, the four arithmetic operations, exp
and log.  Such an expression is C-infinity on the open set where every
denominator is nonzero and every log argument is positive; evaluation outside
that set raises :class:`DomainFault` instead of returning a value.

Gradients are computed by one structural pass that carries (value, tangent)
pairs and caches them per node, so shared subtrees are visited once.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

DIVISION_BY_ZERO = "division-by-zero"
LOG_NONPOSITIVE = "log-nonpositive"


class DomainFault(ArithmeticError):
    """Evaluation point lies outside the open domain of an expression.

    ``node_id`` is the preorder index of the offending node in the root
    expression; ``program_node`` is filled in when the fault happens inside a
    program node.
    """

    def __init__(self, kind, node_id, point, node=None, program_node=None):
        self.kind = kind
        self.node_id = node_id
        self.point = tuple(float(v) for v in point)
        self.node = node
        self.program_node = program_node
        super().__init__(self._message())

    def _message(self):
        where = f"expression node {self.node_id}"
        if self.program_node is not None:
            where = f"program node {self.program_node}, " + where
        return f"{self.kind} at {where}, point {self.point}"

    def at_program_node(self, node_id, point):
        return DomainFault(self.kind, self.node_id, point, self.node, node_id)


class _Fault(Exception):
    # internal signal carrying the offending node; converted at the API boundary
    def __init__(self, kind, node):
        self.kind = kind
        self.node = node


class Expr:
    """Base class of expression nodes; supports arithmetic operators."""

    __slots__ = ()

    def __add__(self, other):
        return Add(self, _lift(other))

    def __radd__(self, other):
        return Add(_lift(other), self)

    def __sub__(self, other):
        return Sub(self, _lift(other))

    def __rsub__(self, other):
        return Sub(_lift(other), self)

    def __mul__(self, other):
        return Mul(self, _lift(other))

    def __rmul__(self, other):
        return Mul(_lift(other), self)

    def __truediv__(self, other):
        return Div(self, _lift(other))

    def __rtruediv__(self, other):
        return Div(_lift(other), self)

    def __neg__(self):
        return Mul(Const(-1.0), self)

    def children(self) -> tuple:
        return ()

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True, eq=True, repr=False)
class Const(Expr):
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))

    def __repr__(self):
        return f"Const({self.value!r})"


@dataclass(frozen=True, eq=True, repr=False)
class Var(Expr):
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("variable index must be nonnegative")

    def __repr__(self):
        return f"Var({self.index})"


@dataclass(frozen=True, eq=True, repr=False)
class Affine(Expr):
    """``sum_i coeffs[i] * x[i] + offset`` over the leading input coordinates."""

    coeffs: tuple
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        object.__setattr__(self, "offset", float(self.offset))

    def __repr__(self):
        return f"Affine({self.coeffs!r}, {self.offset!r})"


@dataclass(frozen=True, eq=True, repr=False)
class _Binary(Expr):
    left: Expr
    right: Expr

    def children(self):
        return (self.left, self.right)

    def __repr__(self):
        return f"{type(self).__name__}({self.left!r}, {self.right!r})"


class Add(_Binary):
    pass


class Sub(_Binary):
    pass


class Mul(_Binary):
    pass


class Div(_Binary):
    pass


@dataclass(frozen=True, eq=True, repr=False)
class _Unary(Expr):
    arg: Expr

    def children(self):
        return (self.arg,)

    def __repr__(self):
        return f"{type(self).__name__}({self.arg!r})"


class Exp(_Unary):
    pass


class Log(_Unary):
    pass


def _lift(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, float, np.floating, np.integer)):
        return Const(float(v))
    raise TypeError(f"cannot use {type(v).__name__} in an expression")


def const(value) -> Const:
    return Const(value)


def var(index) -> Var:
    return Var(index)


def affine(coeffs, offset=0.0) -> Affine:
    return Affine(tuple(coeffs), offset)


def exp(e) -> Exp:
    return Exp(_lift(e))


def log(e) -> Log:
    return Log(_lift(e))


# ---------------------------------------------------------------- traversal


def walk(e: Expr) -> Iterator[Expr]:
    """Preorder traversal; shared subtrees are visited at every occurrence."""
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children()))


def node_index(root: Expr, target: Expr) -> int:
    for i, node in enumerate(walk(root)):
        if node is target:
            return i
    return -1


def variables(e: Expr) -> set:
    """Indices of input coordinates the expression reads."""
    out = set()
    seen = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if isinstance(node, Var):
            out.add(node.index)
        elif isinstance(node, Affine):
            out.update(i for i, c in enumerate(node.coeffs))
        stack.extend(node.children())
    return out


def required_arity(e: Expr) -> int:
    """Smallest input dimension p for which every variable index is < p."""
    vs = variables(e)
    return max(vs) + 1 if vs else 0


def size(e: Expr) -> int:
    """Number of distinct node objects."""
    seen = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if id(node) not in seen:
            seen.add(id(node))
            stack.extend(node.children())
    return len(seen)


# --------------------------------------------------------------- evaluation


def _as_point(x) -> tuple:
    return tuple(float(v) for v in np.ravel(np.asarray(x, dtype=float)))


def _value(e, x, memo):
    key = id(e)
    got = memo.get(key)
    if got is not None:
        return got
    t = type(e)
    if t is Const:
        v = e.value
    elif t is Var:
        v = x[e.index]
    elif t is Affine:
        v = _affine_value(e, x)
    elif t is Add:
        v = _value(e.left, x, memo) + _value(e.right, x, memo)
    elif t is Sub:
        v = _value(e.left, x, memo) - _value(e.right, x, memo)
    elif t is Mul:
        v = _value(e.left, x, memo) * _value(e.right, x, memo)
    elif t is Div:
        u = _value(e.left, x, memo)
        w = _value(e.right, x, memo)
        if w == 0.0:
            raise _Fault(DIVISION_BY_ZERO, e)
        v = u / w
    elif t is Exp:
        v = math.exp(_value(e.arg, x, memo))
    elif t is Log:
        u = _value(e.arg, x, memo)
        if u <= 0.0:
            raise _Fault(LOG_NONPOSITIVE, e)
        v = math.log(u)
    else:
        raise TypeError(f"not an expression node: {e!r}")
    memo[key] = v
    return v


def _affine_value(e, x):
    if not e.coeffs:
        return e.offset
    acc = e.coeffs[0] * x[0]
    for i in range(1, len(e.coeffs)):
        acc = acc + e.coeffs[i] * x[i]
    return acc + e.offset


def _check_point(e, x):
    need = required_arity(e)
    if len(x) < need:
        raise ValueError(f"expression reads coordinate {need - 1} but point has length {len(x)}")


def eval_expr(e: Expr, x) -> float:
    """Evaluate ``e`` at ``x``.

    Raises DomainFault when ``x`` is outside the open domain.
    """
    pt = _as_point(x)
    _check_point(e, pt)
    try:
        return _value(e, pt, {})
    except _Fault as f:
        raise DomainFault(f.kind, node_index(e, f.node), pt, f.node) from None


def _value_and_tangent(e, x, p, memo):
    key = id(e)
    got = memo.get(key)
    if got is not None:
        return got
    t = type(e)
    if t is Const:
        out = (e.value, np.zeros(p))
    elif t is Var:
        d = np.zeros(p)
        d[e.index] = 1.0
        out = (x[e.index], d)
    elif t is Affine:
        d = np.zeros(p)
        d[: len(e.coeffs)] = e.coeffs
        out = (_affine_value(e, x), d)
    elif t is Add:
        u, du = _value_and_tangent(e.left, x, p, memo)
        v, dv = _value_and_tangent(e.right, x, p, memo)
        out = (u + v, du + dv)
    elif t is Sub:
        u, du = _value_and_tangent(e.left, x, p, memo)
        v, dv = _value_and_tangent(e.right, x, p, memo)
        out = (u - v, du - dv)
    elif t is Mul:
        u, du = _value_and_tangent(e.left, x, p, memo)
        v, dv = _value_and_tangent(e.right, x, p, memo)
        out = (u * v, du * v + u * dv)
    elif t is Div:
        u, du = _value_and_tangent(e.left, x, p, memo)
        v, dv = _value_and_tangent(e.right, x, p, memo)
        if v == 0.0:
            raise _Fault(DIVISION_BY_ZERO, e)
        w = u / v
        out = (w, (du - w * dv) / v)
    elif t is Exp:
        u, du = _value_and_tangent(e.arg, x, p, memo)
        w = math.exp(u)
        out = (w, w * du)
    elif t is Log:
        u, du = _value_and_tangent(e.arg, x, p, memo)
        if u <= 0.0:
            raise _Fault(LOG_NONPOSITIVE, e)
        out = (math.log(u), du / u)
    else:
        raise TypeError(f"not an expression node: {e!r}")
    memo[key] = out
    return out


def value_and_grad(e: Expr, x) -> tuple[float, np.ndarray]:
    pt = _as_point(x)
    _check_point(e, pt)
    try:
        v, d = _value_and_tangent(e, pt, len(pt), {})
    except _Fault as f:
        raise DomainFault(f.kind, node_index(e, f.node), pt, f.node) from None
    return v, d.copy()


def grad_expr(e: Expr, x) -> np.ndarray:
    """Exact gradient of ``e`` at ``x`` (length ``len(x)``)."""
    return value_and_grad(e, x)[1]


# --------------------------------------------------- symbolic differentiation


def derivative(e: Expr, k: int) -> Expr:
    """Materialize the partial derivative with respect to ``x[k]`` as an expression.

    Uses the same product/quotient/chain formulas as :func:`grad_expr`, so the
    materialized derivative evaluates to the same floats.
    """
    memo = {}

    def d(node):
        key = id(node)
        if key in memo:
            return memo[key]
        t = type(node)
        if t is Const:
            out = Const(0.0)
        elif t is Var:
            out = Const(1.0 if node.index == k else 0.0)
        elif t is Affine:
            out = Const(node.coeffs[k] if k < len(node.coeffs) else 0.0)
        elif t is Add:
            out = Add(d(node.left), d(node.right))
        elif t is Sub:
            out = Sub(d(node.left), d(node.right))
        elif t is Mul:
            out = Add(Mul(d(node.left), node.right), Mul(node.left, d(node.right)))
        elif t is Div:
            out = Div(Sub(d(node.left), Mul(node, d(node.right))), node.right)
        elif t is Exp:
            out = Mul(node, d(node.arg))
        elif t is Log:
            out = Div(d(node.arg), node.arg)
        else:
            raise TypeError(f"not an expression node: {node!r}")
        memo[key] = out
        return out

    return d(e)


def substitute(e: Expr, replacements: Sequence[Expr]) -> Expr:
    """Replace ``Var(i)`` by ``replacements[i]``; sharing is preserved.

    Affine nodes expand to the same left-to-right sum they evaluate, so the
    result evaluates bit-identically to evaluating the replacements first.
    """
    memo = {}

    def s(node):
        key = id(node)
        if key in memo:
            return memo[key]
        t = type(node)
        if t is Const:
            out = node
        elif t is Var:
            out = replacements[node.index]
        elif t is Affine:
            if not node.coeffs:
                out = Const(node.offset)
            else:
                acc = Mul(Const(node.coeffs[0]), replacements[0])
                for i in range(1, len(node.coeffs)):
                    acc = Add(acc, Mul(Const(node.coeffs[i]), replacements[i]))
                out = Add(acc, Const(node.offset))
        elif isinstance(node, _Binary):
            out = t(s(node.left), s(node.right))
        elif isinstance(node, _Unary):
            out = t(s(node.arg))
        else:
            raise TypeError(f"not an expression node: {node!r}")
        memo[key] = out
        return out

    return s(e)


def remap(e: Expr, mapping: dict) -> Expr:
    """Renumber variables: ``Var(i)`` becomes ``Var(mapping[i])``."""
    if any(isinstance(n, Affine) for n in walk(e)):
        raise ValueError("remap does not support affine nodes; substitute instead")
    return substitute(e, _MappingView(mapping))


class _MappingView:
    def __init__(self, mapping):
        self.mapping = mapping

    def __getitem__(self, i):
        return Var(self.mapping[i])


# ---------------------------------------------------------- text round-trip

_HEADS = {Add: "add", Sub: "sub", Mul: "mul", Div: "div", Exp: "exp", Log: "log"}
_CLASSES = {v: k for k, v in _HEADS.items()}


def to_text(e: Expr) -> str:
    """Canonical S-expression text, e.g. ``(add (var 0) (const 2.0))``."""
    t = type(e)
    if t is Const:
        return f"(const {e.value!r})"
    if t is Var:
        return f"(var {e.index})"
    if t is Affine:
        coeffs = " ".join(repr(c) for c in e.coeffs)
        return f"(affine ({coeffs}) {e.offset!r})"
    return "(" + _HEADS[t] + "".join(" " + to_text(c) for c in e.children()) + ")"


_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def tokenize_sexpr(text: str) -> list:
    return _TOKEN.findall(text)


def read_sexpr(text: str):
    """Parse S-expression text into nested lists of string atoms."""
    tokens = tokenize_sexpr(text)
    pos = 0

    def read():
        nonlocal pos
        if pos >= len(tokens):
            raise ValueError("unexpected end of S-expression")
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            items = []
            while pos < len(tokens) and tokens[pos] != ")":
                items.append(read())
            if pos >= len(tokens):
                raise ValueError("unbalanced '(' in S-expression")
            pos += 1
            return items
        if tok == ")":
            raise ValueError("unexpected ')' in S-expression")
        return tok

    tree = read()
    if pos != len(tokens):
        raise ValueError("trailing tokens after S-expression")
    return tree


def from_tree(tree) -> Expr:
    if not isinstance(tree, list) or not tree:
        raise ValueError(f"expected an expression list, got {tree!r}")
    head, *args = tree
    if head == "const":
        return Const(float(args[0]))
    if head == "var":
        return Var(int(args[0]))
    if head == "affine":
        coeffs, offset = args
        return Affine(tuple(float(c) for c in coeffs), float(offset))
    cls = _CLASSES.get(head)
    if cls is None:
        raise ValueError(f"unknown expression head {head!r}")
    expected = 1 if cls in (Exp, Log) else 2
    if len(args) != expected:
        raise ValueError(f"{head} takes {expected} operand(s), got {len(args)}")
    return cls(*(from_tree(a) for a in args))


def parse_expr(text: str) -> Expr:
    return from_tree(read_sexpr(text))
