"""Hypothesis strategies shared across the suite."""

import numpy as np
from hypothesis import strategies as st

from seldiff import fixtures
from seldiff.expr import Add, Affine, Const, Div, Exp, Log, Mul, Sub, Var

finite = st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False)
seeds = st.integers(0, 2**32 - 1)


def points(arity, lo=-2.0, hi=2.0):
    return st.lists(st.floats(lo, hi, allow_nan=False), min_size=arity, max_size=arity)


def safe_exprs(arity, max_leaves=12):
    """Expressions defined everywhere: denominators and log arguments are 1 + u*u."""
    leaves = st.one_of(
        st.builds(Var, st.integers(0, arity - 1)),
        st.builds(Const, st.floats(-2.0, 2.0, allow_nan=False).map(lambda v: round(v, 3))),
        st.builds(
            Affine,
            st.lists(st.floats(-2, 2, allow_nan=False).map(lambda v: round(v, 3)), min_size=arity, max_size=arity).map(tuple),
            st.floats(-1, 1, allow_nan=False).map(lambda v: round(v, 3)),
        ),
    )

    def extend(children):
        def one_plus_sq(u):
            return Add(Const(1.0), Mul(u, u))

        return st.one_of(
            st.builds(Add, children, children),
            st.builds(Sub, children, children),
            st.builds(Mul, children, children),
            st.builds(lambda a, b: Div(a, one_plus_sq(b)), children, children),
            children.map(lambda a: Exp(Div(a, one_plus_sq(a)))),
            children.map(lambda a: Log(one_plus_sq(a))),
        )

    return st.recursive(leaves, extend, max_leaves=max_leaves)


@st.composite
def dag_programs(draw, p=None, m_max=30):
    rng = np.random.default_rng(draw(seeds))
    return fixtures.random_dag_program(rng, p, m_max)


@st.composite
def random_selections(draw, arity=2, depth=2):
    rng = np.random.default_rng(draw(seeds))
    return fixtures.random_selection(rng, arity, depth)
