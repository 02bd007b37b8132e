"""Elementary indices and selection functions.

A selection function is a list of (guard, branch) pairs.  The active index at
``x`` is the first guard that holds; the value is the active branch evaluated
at ``x``.  Guards are and/or trees over atoms ``g(x) op 0``.

Composition builds the product refinement: for each joint choice of branch
indices of the inner functions and each branch of the outer function there is
one composed branch, guarded by the inner guards followed by the outer guard
with the inner branches substituted in.  Evaluating the composed guards
first-true in lexicographic order reproduces the index of the composition.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import expr as ex
from .expr import Const, DomainFault, Expr, Var

DEFAULT_BRANCH_CAP = 10_000

OPS = ("<", "<=", "==", ">=", ">")
_OP_NAMES = {"<": "lt", "<=": "le", "==": "eq", ">=": "ge", ">": "gt"}
_NAME_OPS = {v: k for k, v in _OP_NAMES.items()}
_NEGATED = {"<": ">=", "<=": ">", ">=": "<", ">": "<="}


class TotalityError(ValueError):
    """No guard of a selection function holds at the point."""

    def __init__(self, point):
        self.point = tuple(point)
        super().__init__(f"no guard holds at {self.point}")


class BranchOverflow(ValueError):
    """Product refinement would exceed the branch cap."""

    def __init__(self, count, cap):
        self.count = count
        self.cap = cap
        super().__init__(f"product refinement needs {count} branches, cap is {cap}")


# --------------------------------------------------------------- predicates


@dataclass(frozen=True)
class Atom:
    expr: Expr
    op: str

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown comparison {self.op!r}")


@dataclass(frozen=True)
class And:
    terms: tuple = ()


@dataclass(frozen=True)
class Or:
    terms: tuple = ()


TRUE = And(())
FALSE = Or(())


def atom(e, op) -> Atom:
    return Atom(ex._lift(e), op)


def conj(*terms):
    flat = []
    for t in terms:
        if isinstance(t, And):
            flat.extend(t.terms)
        else:
            flat.append(t)
    if len(flat) == 1:
        return flat[0]
    return And(tuple(flat))


def disj(*terms):
    flat = []
    for t in terms:
        if isinstance(t, Or):
            flat.extend(t.terms)
        else:
            flat.append(t)
    if len(flat) == 1:
        return flat[0]
    return Or(tuple(flat))


def complement(pred):
    """Logical negation, pushed to the atoms."""
    if isinstance(pred, Atom):
        if pred.op == "==":
            return Or((Atom(pred.expr, "<"), Atom(pred.expr, ">")))
        return Atom(pred.expr, _NEGATED[pred.op])
    if isinstance(pred, And):
        return Or(tuple(complement(t) for t in pred.terms))
    if isinstance(pred, Or):
        return And(tuple(complement(t) for t in pred.terms))
    raise TypeError(f"not a predicate: {pred!r}")


def _compare(v, op):
    if op == "<":
        return v < 0.0
    if op == "<=":
        return v <= 0.0
    if op == "==":
        return v == 0.0
    if op == ">=":
        return v >= 0.0
    return v > 0.0


def _holds(pred, x, memo):
    t = type(pred)
    if t is Atom:
        return _compare(ex._value(pred.expr, x, memo), pred.op)
    if t is And:
        for term in pred.terms:
            if not _holds(term, x, memo):
                return False
        return True
    if t is Or:
        for term in pred.terms:
            if _holds(term, x, memo):
                return True
        return False
    raise TypeError(f"not a predicate: {pred!r}")


def pred_atoms(pred):
    if isinstance(pred, Atom):
        yield pred
    else:
        for t in pred.terms:
            yield from pred_atoms(t)


def map_pred(pred, fn):
    """Rebuild a predicate with every atom expression replaced by ``fn(expr)``."""
    if isinstance(pred, Atom):
        return Atom(fn(pred.expr), pred.op)
    return type(pred)(tuple(map_pred(t, fn) for t in pred.terms))


def eval_pred(pred, x) -> bool:
    pt = ex._as_point(x)
    try:
        return _holds(pred, pt, {})
    except ex._Fault as f:
        raise _locate(f, [a.expr for a in pred_atoms(pred)], pt) from None


def _locate(f, roots, pt):
    for r in roots:
        k = ex.node_index(r, f.node)
        if k >= 0:
            return DomainFault(f.kind, k, pt, f.node)
    return DomainFault(f.kind, -1, pt, f.node)


# -------------------------------------------------------- selection function


class SelectionFunction:
    """Guarded branch list over R^arity; index is the first guard that holds.

    ``guards`` and ``branches`` have equal length m; branch ids are 1..m.
    Two selection functions whose ``guards`` tuple is the same object share
    their index, which composition uses to keep joint choices consistent.
    """

    __slots__ = ("arity", "guards", "branches", "name")

    def __init__(self, arity: int, guards: Sequence, branches: Sequence[Expr], name=None):
        guards = guards if isinstance(guards, tuple) else tuple(guards)
        branches = tuple(ex._lift(b) for b in branches)
        if len(guards) != len(branches):
            raise ValueError("guards and branches must have the same length")
        if not branches:
            raise ValueError("a selection function needs at least one branch")
        self.arity = int(arity)
        self.guards = guards
        self.branches = branches
        self.name = name
        need = max(
            [ex.required_arity(b) for b in branches]
            + [ex.required_arity(a.expr) for g in guards for a in pred_atoms(g)]
        )
        if need > self.arity:
            raise ValueError(f"expression reads coordinate {need - 1} beyond arity {self.arity}")

    @property
    def m(self) -> int:
        return len(self.branches)

    def with_branches(self, branches, name=None):
        """Same index (shared guards object), new branch expressions."""
        return SelectionFunction(self.arity, self.guards, branches, name)

    def is_smooth(self):
        return self.m == 1

    def _index(self, x, memo):
        for i, g in enumerate(self.guards):
            if _holds(g, x, memo):
                return i + 1
        raise TotalityError(x)

    def _fault(self, f, pt):
        roots = [a.expr for g in self.guards for a in pred_atoms(g)] + list(self.branches)
        return _locate(f, roots, pt)

    def index(self, x) -> int:
        pt = ex._as_point(x)
        self._check(pt)
        try:
            return self._index(pt, {})
        except ex._Fault as f:
            raise self._fault(f, pt) from None

    def value_index(self, x):
        pt = ex._as_point(x)
        self._check(pt)
        memo = {}
        try:
            i = self._index(pt, memo)
            return ex._value(self.branches[i - 1], pt, memo), i
        except ex._Fault as f:
            raise self._fault(f, pt) from None

    def value(self, x) -> float:
        return self.value_index(x)[0]

    __call__ = value

    def gradient(self, x) -> np.ndarray:
        pt = ex._as_point(x)
        i = self.index(pt)
        return ex.grad_expr(self.branches[i - 1], pt)

    def _check(self, pt):
        if len(pt) != self.arity:
            raise ValueError(f"point has length {len(pt)}, selection function has arity {self.arity}")

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<SelectionFunction{label} arity={self.arity} m={self.m}>"


def index_of(F: SelectionFunction, x) -> int:
    return F.index(x)


def eval_selection(F: SelectionFunction, x) -> float:
    return F.value(x)


def selection_gradient(F: SelectionFunction, x) -> np.ndarray:
    """Gradient of the active branch at x (branches frozen)."""
    return F.gradient(x)


def selection_jacobian(Fs: Sequence[SelectionFunction], x) -> np.ndarray:
    return np.vstack([F.gradient(x) for F in Fs]) if Fs else np.zeros((0, len(x)))


# --------------------------------------------------------------- refinement


def _groups(Fs):
    """Partition coordinate functions by shared index (same guards object)."""
    groups = []
    seen = {}
    for k, F in enumerate(Fs):
        if F.m == 1:
            continue
        key = id(F.guards)
        if key not in seen:
            seen[key] = len(groups)
            groups.append((F.guards, []))
        groups[seen[key]][1].append(k)
    return groups


def compose(g: SelectionFunction, Fs: Sequence[SelectionFunction], cap=DEFAULT_BRANCH_CAP, name=None):
    """Representation of ``x -> g(F_1(x), ..., F_k(x))``."""
    Fs = list(Fs)
    if len(Fs) != g.arity:
        raise ValueError(f"outer function has arity {g.arity}, got {len(Fs)} inner functions")
    if not Fs:
        raise ValueError("compose needs at least one inner function")
    p = Fs[0].arity
    if any(F.arity != p for F in Fs):
        raise ValueError("inner functions must share their arity")
    groups = _groups(Fs)
    count = g.m
    for guards, _ in groups:
        count *= len(guards)
    if count > cap:
        raise BranchOverflow(count, cap)

    guards_out = []
    branches_out = []
    choice_ranges = [range(len(guards)) for guards, _ in groups]
    for choice in itertools.product(*choice_ranges):
        active = [0] * len(Fs)
        inner_guard = []
        for (guards, members), c in zip(groups, choice):
            inner_guard.append(guards[c])
            for k in members:
                active[k] = c
        inner = [F.branches[active[k]] for k, F in enumerate(Fs)]
        memo = {}

        def sub(e, inner=inner, memo=memo):
            key = id(e)
            if key not in memo:
                memo[key] = ex.substitute(e, inner)
            return memo[key]

        for j in range(g.m):
            outer = map_pred(g.guards[j], sub)
            guards_out.append(_simplify(conj(*inner_guard, outer)))
            branches_out.append(sub(g.branches[j]))
    return SelectionFunction(p, guards_out, branches_out, name)


def _simplify(pred):
    if isinstance(pred, And):
        terms = tuple(_simplify(t) for t in pred.terms if t != TRUE)
        return terms[0] if len(terms) == 1 else And(terms)
    return pred


def smooth(e: Expr, arity: int, name=None) -> SelectionFunction:
    return SelectionFunction(arity, (TRUE,), (e,), name)


def identity(arity=1, coord=0) -> SelectionFunction:
    return smooth(Var(coord), arity, "identity")


def constant(c, arity=1) -> SelectionFunction:
    return smooth(Const(c), arity, "constant")


def add(F, G, cap=DEFAULT_BRANCH_CAP):
    return compose(smooth(Var(0) + Var(1), 2), [F, G], cap, "add")


def subtract(F, G, cap=DEFAULT_BRANCH_CAP):
    return compose(smooth(Var(0) - Var(1), 2), [F, G], cap, "sub")


def multiply(F, G, cap=DEFAULT_BRANCH_CAP):
    return compose(smooth(Var(0) * Var(1), 2), [F, G], cap, "mul")


def scale(F, c):
    return compose(smooth(Const(c) * Var(0), 1), [F], name="scale")


def negate(F):
    return compose(smooth(-Var(0), 1), [F], name="neg")


# alias matching the calculus vocabulary
sum_ = add
product = multiply


# ---------------------------------------------------------- standard library

_t = Var(0)


def relu() -> SelectionFunction:
    """max(0, t) with the tie sent to the zero branch."""
    return SelectionFunction(1, (Atom(_t, "<="), TRUE), (Const(0.0), _t), "relu")


def relu_strict() -> SelectionFunction:
    """max(0, t) with the tie sent to the identity branch."""
    return SelectionFunction(1, (Atom(_t, "<"), TRUE), (Const(0.0), _t), "relu_strict")


def relu2() -> SelectionFunction:
    """relu(-t) + t."""
    return add(compose(relu(), [smooth(-_t, 1)]), identity())


def relu3() -> SelectionFunction:
    """(relu(t) + relu2(t)) / 2."""
    return scale(add(relu(), relu2()), 0.5)


def zero() -> SelectionFunction:
    """relu2(t) - relu(t), identically 0."""
    return subtract(relu2(), relu())


def zero_two_branch() -> SelectionFunction:
    """The null function with index 1 off the origin and 2 at the origin."""
    off_origin = Or((Atom(_t, "<"), Atom(_t, ">")))
    return SelectionFunction(1, (off_origin, TRUE), (Const(0.0), _t), "zero_two_branch")


def abs_() -> SelectionFunction:
    return SelectionFunction(
        1, (Atom(_t, "=="), Atom(_t, ">"), TRUE), (Const(0.0), _t, -_t), "abs"
    )


def max2() -> SelectionFunction:
    a, b = Var(0), Var(1)
    return SelectionFunction(2, (Atom(a - b, ">="), TRUE), (a, b), "max")


def min2() -> SelectionFunction:
    a, b = Var(0), Var(1)
    return SelectionFunction(2, (Atom(a - b, "<="), TRUE), (a, b), "min")


def sort2() -> list:
    """Descending sort of a 2-vector as two coordinates sharing one index."""
    a, b = Var(0), Var(1)
    guards = (Atom(a - b, ">="), TRUE)
    hi = SelectionFunction(2, guards, (a, b), "sort_hi")
    lo = SelectionFunction(2, guards, (b, a), "sort_lo")
    return [hi, lo]


# ------------------------------------------------------------ continuity check


@dataclass
class ContinuityReport:
    boundary_points: int
    max_jump: float
    worst_point: tuple | None

    @property
    def ok(self):
        return self.max_jump <= 1e-9


def _safe_index(F, x):
    try:
        return F.index(x)
    except (DomainFault, TotalityError):
        return None


def check_continuity(F: SelectionFunction, rng, n_segments=200, box=2.0, scan=64) -> ContinuityReport:
    """Sample random segments, bisect index switches, compare the two branches there.

    The jump at a switch is |f_i - f_j| at the bisected boundary point.
    """
    worst = 0.0
    worst_pt = None
    count = 0
    for _ in range(n_segments):
        a = rng.uniform(-box, box, F.arity)
        b = rng.uniform(-box, box, F.arity)
        ts = np.linspace(0.0, 1.0, scan + 1)
        prev_t, prev_i = 0.0, _safe_index(F, a)
        for t in ts[1:]:
            i = _safe_index(F, a + t * (b - a))
            if i != prev_i and i is not None and prev_i is not None:
                lo, hi = prev_t, t
                ilo = prev_i
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    im = _safe_index(F, a + mid * (b - a))
                    if im == ilo:
                        lo = mid
                    else:
                        hi = mid
                    if hi - lo < 1e-13:
                        break
                x_lo = a + lo * (b - a)
                x_hi = a + hi * (b - a)
                i_hi = _safe_index(F, x_hi)
                if i_hi is None:
                    prev_t, prev_i = t, i
                    continue
                try:
                    jump = max(
                        abs(ex.eval_expr(F.branches[ilo - 1], x_lo) - ex.eval_expr(F.branches[i_hi - 1], x_lo)),
                        abs(ex.eval_expr(F.branches[ilo - 1], x_hi) - ex.eval_expr(F.branches[i_hi - 1], x_hi)),
                    )
                except DomainFault:
                    jump = math.inf
                # points within 1e-13 of the boundary; allow the Lipschitz slack
                slack = 1e-12 * (1.0 + float(np.linalg.norm(b - a))) * 10
                jump = max(0.0, jump - slack)
                count += 1
                if jump > worst:
                    worst, worst_pt = jump, tuple(x_lo)
            prev_t, prev_i = t, i
    return ContinuityReport(count, worst, worst_pt)


# -------------------------------------------------------------- text format


def pred_to_text(pred) -> str:
    if isinstance(pred, Atom):
        return f"({_OP_NAMES[pred.op]} {ex.to_text(pred.expr)})"
    head = "and" if isinstance(pred, And) else "or"
    return "(" + head + "".join(" " + pred_to_text(t) for t in pred.terms) + ")"


def pred_from_tree(tree):
    head, *args = tree
    if head in _NAME_OPS:
        return Atom(ex.from_tree(args[0]), _NAME_OPS[head])
    if head == "and":
        return And(tuple(pred_from_tree(a) for a in args))
    if head == "or":
        return Or(tuple(pred_from_tree(a) for a in args))
    raise ValueError(f"unknown predicate head {head!r}")


def to_text(F: SelectionFunction) -> str:
    cases = "".join(
        f" (case {pred_to_text(g)} {ex.to_text(b)})" for g, b in zip(F.guards, F.branches)
    )
    return f"(select {F.arity}{cases})"


def from_text(text: str, name=None) -> SelectionFunction:
    tree = ex.read_sexpr(text)
    if not tree or tree[0] != "select":
        raise ValueError("expected (select ARITY (case GUARD EXPR) ...)")
    arity = int(tree[1])
    guards, branches = [], []
    for case in tree[2:]:
        if case[0] != "case" or len(case) != 3:
            raise ValueError("malformed case")
        guards.append(pred_from_tree(case[1]))
        branches.append(ex.from_tree(case[2]))
    return SelectionFunction(arity, guards, branches, name)
