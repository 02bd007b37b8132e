"""Named programs, finite-sum problems and random generators used by tests and the CLI."""

from __future__ import annotations

import numpy as np

from . import selection as sel
from .expr import Add, Affine, Const, Div, Exp, Log, Mul, Sub, Var
from .program import Program, ProgramBuilder

x0_, x1_, x2_ = Var(0), Var(1), Var(2)


# ---------------------------------------------------------- named programs


def relu_program() -> Program:
    b = ProgramBuilder(1, "relu")
    return b.build([b.apply(sel.relu(), [1])])


def relu2_program() -> Program:
    """relu(-t) + t."""
    b = ProgramBuilder(1, "relu2")
    neg = b.smooth(-x0_, [1])
    r = b.apply(sel.relu(), [neg])
    return b.build([b.smooth(x0_ + x1_, [r, 1])])


def _relu2_nodes(b, t):
    neg = b.smooth(-x0_, [t])
    r = b.apply(sel.relu(), [neg])
    return b.smooth(x0_ + x1_, [r, t])


def relu3_program() -> Program:
    """(relu(t) + relu2(t)) / 2."""
    b = ProgramBuilder(1, "relu3")
    r1 = b.apply(sel.relu(), [1])
    r2 = _relu2_nodes(b, 1)
    return b.build([b.smooth(Const(0.5) * (x0_ + x1_), [r1, r2])])


def _zero_nodes(b, t):
    r2 = _relu2_nodes(b, t)
    r1 = b.apply(sel.relu(), [t])
    return b.smooth(x0_ - x1_, [r2, r1])


def zero_program() -> Program:
    """relu2(t) - relu(t): identically 0."""
    b = ProgramBuilder(1, "zero")
    return b.build([_zero_nodes(b, 1)])


def id_minus_zero_program() -> Program:
    """t - zero(t): the identity as a function."""
    b = ProgramBuilder(1, "id-zero")
    z = _zero_nodes(b, 1)
    return b.build([b.smooth(x0_ - x1_, [1, z])])


def square_program() -> Program:
    b = ProgramBuilder(1, "square")
    return b.build([b.smooth(x0_ * x0_, [1])])


def abs_program() -> Program:
    b = ProgramBuilder(1, "abs")
    return b.build([b.apply(sel.abs_(), [1])])


def max_program() -> Program:
    b = ProgramBuilder(2, "max")
    return b.build([b.apply(sel.max2(), [1, 2])])


def relu_chain_program(depth=20) -> Program:
    b = ProgramBuilder(1, f"relu^{depth}")
    node = 1
    for _ in range(depth):
        node = b.apply(sel.relu(), [node])
    return b.build([node])


RELU_VARIANT_SLOPES = (
    ("relu", relu_program, 0.0),
    ("relu2", relu2_program, 1.0),
    ("relu3", relu3_program, 0.5),
    ("zero", zero_program, 1.0),
    ("id-zero", id_minus_zero_program, 0.0),
)


# ---------------------------------------------------------- finite sums


def _half_square(b, node, shift=0.0):
    return b.smooth(Const(0.5) * ((x0_ - shift) * (x0_ - shift)), [node])


def quadratic_problem():
    from .optimize import FiniteSumProblem

    b1 = ProgramBuilder(2, "f1")
    f1 = b1.build([b1.smooth(Const(0.5) * ((x0_ + x1_) * (x0_ + x1_)), [1, 2])])
    b2 = ProgramBuilder(2, "f2")
    f2 = b2.build([b2.smooth(Const(0.5) * ((x0_ - x1_) * (x0_ - x1_)), [1, 2])])
    return FiniteSumProblem([f1, f2], "quadratic")


def artefact_problem():
    """J(x) = (1/2)(x-1)^2 + zero(x), split as f1 = (1/2)(x-1)^2, f2 = f1 + 2 zero(x).

    Backward AD of J at 0 is (0 - 1) + 1 = 0 although J'(0) = -1.
    """
    from .optimize import FiniteSumProblem

    b1 = ProgramBuilder(1, "f1")
    f1 = b1.build([_half_square(b1, 1, 1.0)])
    b2 = ProgramBuilder(1, "f2")
    q = _half_square(b2, 1, 1.0)
    z = _zero_nodes(b2, 1)
    f2 = b2.build([b2.smooth(x0_ + Const(2.0) * x1_, [q, z])])
    return FiniteSumProblem([f1, f2], "artefact")


RELU_NET_T = (-3.0, -1.0, 1.0)
RELU_NET_Y = (0.0, 0.5, 2.5)
RELU_NET_OPT = (1.0, 1.5)


def relu_net_problem():
    """f_i(w) = (1/2)(relu(w1 t_i + w2) - y_i)^2; the data are fit exactly at w = (1, 1.5)."""
    from .optimize import FiniteSumProblem

    comps = []
    for i, (t, y) in enumerate(zip(RELU_NET_T, RELU_NET_Y)):
        b = ProgramBuilder(2, f"f{i + 1}")
        pre = b.smooth(Affine((t, 1.0), 0.0), [1, 2])
        act = b.apply(sel.relu(), [pre])
        comps.append(b.build([_half_square(b, act, y)]))
    return FiniteSumProblem(comps, "relu-net")


def relu_problem():
    from .optimize import FiniteSumProblem

    return FiniteSumProblem([relu_program()], "relu")


def smooth_half_square_problem():
    from .optimize import FiniteSumProblem

    b = ProgramBuilder(1, "half-square")
    return FiniteSumProblem([b.build([_half_square(b, 1)])], "half-square")


PROBLEMS = {
    "quadratic": quadratic_problem,
    "artefact": artefact_problem,
    "relu-net": relu_net_problem,
    "relu": relu_problem,
    "half-square": smooth_half_square_problem,
}


# ---------------------------------------------------------- random generators


def random_expr(rng, arity, depth=3):
    """Random in-domain-everywhere expression: denominators and log arguments stay >= 1."""
    if depth <= 0 or rng.random() < 0.25:
        r = rng.random()
        if r < 0.5:
            return Var(int(rng.integers(arity)))
        if r < 0.75:
            return Const(float(np.round(rng.normal(), 3)))
        return Affine(tuple(np.round(rng.normal(size=arity), 3)), float(np.round(rng.normal(), 3)))
    kind = rng.integers(6)
    a = random_expr(rng, arity, depth - 1)
    if kind == 0:
        return Add(a, random_expr(rng, arity, depth - 1))
    if kind == 1:
        return Sub(a, random_expr(rng, arity, depth - 1))
    if kind == 2:
        return Mul(a, random_expr(rng, arity, depth - 1))
    if kind == 3:
        b = random_expr(rng, arity, depth - 1)
        return Div(a, Add(Const(1.0), Mul(b, b)))
    if kind == 4:
        return Exp(Div(a, Add(Const(1.0), Mul(a, a))))
    return Log(Add(Const(1.0), Mul(a, a)))


def _tame(u):
    # bounded argument keeps exp nodes moderate along deep chains
    return Exp(Div(u, Add(Const(1.0), Mul(u, u))))


def random_dag_program(rng, p=None, m_max=30, kinds=("relu", "abs", "max", "min", "exp", "affine")) -> Program:
    """Random scalar program mixing nonsmooth and smooth nodes."""
    p = int(rng.integers(1, 4)) if p is None else p
    m = int(rng.integers(p + 1, m_max + 1))
    b = ProgramBuilder(p, "random-dag")
    for i in range(p + 1, m + 1):
        avail = i - 1
        kind = kinds[int(rng.integers(len(kinds)))]

        def pick(avail=avail):
            # favour recent nodes so the DAG is deep
            return int(rng.integers(max(1, avail - 5), avail + 1))

        if kind == "relu":
            b.apply(sel.relu(), [pick()])
        elif kind == "abs":
            b.apply(sel.abs_(), [pick()])
        elif kind == "max":
            b.apply(sel.max2(), [pick(), pick()])
        elif kind == "min":
            b.apply(sel.min2(), [pick(), pick()])
        elif kind == "exp":
            b.smooth(_tame(x0_), [pick()])
        else:
            k = int(rng.integers(1, min(3, avail) + 1))
            ids = [pick() for _ in range(k)]
            coeffs = tuple(float(c) for c in np.round(rng.normal(size=k) / np.sqrt(k), 3))
            b.smooth(Affine(coeffs, float(np.round(rng.normal() * 0.3, 3))), ids)
    return b.build([m])


def random_piecewise_program(rng, p=2, n_nodes=6) -> Program:
    """Small random piecewise-smooth scalar program over R^p for path integrals."""
    b = ProgramBuilder(p, "random-piecewise")
    nodes = list(range(1, p + 1))
    for _ in range(n_nodes):
        kind = int(rng.integers(5))
        if kind == 0:
            ids = [int(rng.choice(nodes)) for _ in range(2)]
            coeffs = tuple(float(c) for c in np.round(rng.normal(size=2), 3))
            n = b.smooth(Affine(coeffs, float(np.round(rng.normal() * 0.5, 3))), ids)
        elif kind == 1:
            n = b.apply(sel.relu(), [int(rng.choice(nodes))])
        elif kind == 2:
            n = b.apply(sel.abs_(), [int(rng.choice(nodes))])
        elif kind == 3:
            n = b.apply(sel.max2(), [int(rng.choice(nodes)), int(rng.choice(nodes))])
        else:
            u = int(rng.choice(nodes))
            n = b.smooth(random_expr(rng, 1, 2), [u])
        nodes.append(n)
    last = nodes[-1]
    # mix in the first input so the output depends on the inputs
    coeffs = tuple(float(c) for c in np.round(rng.normal(size=2), 3))
    out = b.smooth(Affine(coeffs, 0.0), [last, 1])
    return b.build([out])


def random_selection(rng, arity, depth=2) -> sel.SelectionFunction:
    """Continuous random selection function: max/min/relu/abs of smooth pieces."""
    if depth <= 0:
        return sel.smooth(random_expr(rng, arity, 2), arity)
    kind = int(rng.integers(4))
    if kind == 0:
        return sel.compose(sel.max2(), [random_selection(rng, arity, depth - 1), random_selection(rng, arity, depth - 1)])
    if kind == 1:
        return sel.compose(sel.min2(), [random_selection(rng, arity, depth - 1), random_selection(rng, arity, depth - 1)])
    if kind == 2:
        return sel.compose(sel.relu(), [random_selection(rng, arity, depth - 1)])
    return sel.compose(sel.abs_(), [random_selection(rng, arity, depth - 1)])
