import math

import numpy as np
import pytest
from hypothesis import given
from oracles import mp_central_difference, symbolic_value_and_grad
from strategies import points, safe_exprs

from seldiff import expr as ex
from seldiff.expr import Add, Affine, Const, Div, DomainFault, Exp, Log, Mul, Sub, Var
from seldiff.fixtures import random_expr

x0, x1 = Var(0), Var(1)


# ---------------------------------------------------------- evaluation


def test_exp_log_inverse_pair():
    assert ex.eval_expr(Exp(Log(x0)), [2.0]) == pytest.approx(2.0, rel=1e-15)


def test_affine_value():
    assert ex.eval_expr(Affine((2.0, -1.0), 3.0), [1.0, 4.0]) == 1.0


def test_reciprocal_at_zero_faults():
    with pytest.raises(DomainFault) as info:
        ex.eval_expr(Div(Const(1.0), x0), [0.0])
    assert info.value.kind == ex.DIVISION_BY_ZERO
    assert info.value.node_id == 0
    assert info.value.point == (0.0,)


@pytest.mark.parametrize("arg", [0.0, -1.0])
def test_log_of_nonpositive_faults(arg):
    with pytest.raises(DomainFault) as info:
        ex.eval_expr(Add(Const(1.0), Log(x0)), [arg])
    assert info.value.kind == ex.LOG_NONPOSITIVE
    assert info.value.node_id == 2  # preorder: add, const, log


def test_short_point_rejected():
    with pytest.raises(ValueError):
        ex.eval_expr(x0 + x1, [1.0])


def test_operator_overloads_build_trees():
    e = 2 * x0 - x1 / 4 + 1
    assert ex.eval_expr(e, [3.0, 8.0]) == 5.0
    assert (-x0) == Mul(Const(-1.0), x0)


def test_shared_subtree_evaluated_once_and_consistent():
    u = Exp(x0)
    e = Mul(u, u)
    assert ex.size(e) == 3
    assert ex.eval_expr(e, [0.5]) == math.exp(0.5) * math.exp(0.5)


# ---------------------------------------------------------- gradients


def test_square_gradient():
    assert ex.grad_expr(Mul(x0, x0), [3.0]).tolist() == [6.0]


def test_exp_of_product_gradient():
    assert ex.grad_expr(Exp(Mul(x0, x1)), [0.0, 5.0]).tolist() == [5.0, 0.0]


def test_gradient_domain_fault():
    with pytest.raises(DomainFault):
        ex.value_and_grad(Log(x0), [0.0])


def _central(e, x, h=1e-6):
    out = []
    for k in range(len(x)):
        up, dn = list(x), list(x)
        up[k] += h
        dn[k] -= h
        out.append((ex.eval_expr(e, up) - ex.eval_expr(e, dn)) / (2 * h))
    return np.array(out)


def test_gradient_matches_central_differences_on_1000_pairs():
    rng = np.random.default_rng(20240611)
    checked = 0
    while checked < 1000:
        arity = int(rng.integers(1, 4))
        e = random_expr(rng, arity, depth=4)
        x = rng.uniform(-1.5, 1.5, arity)
        g = ex.grad_expr(e, x)
        fd = _central(e, x)
        assert np.all(np.abs(g - fd) <= 1e-6 * (1 + np.abs(g))), (ex.to_text(e), x, g, fd)
        checked += 1


def test_gradient_matches_symbolic_oracle():
    rng = np.random.default_rng(7)
    for _ in range(150):
        arity = int(rng.integers(1, 4))
        e = random_expr(rng, arity, depth=3)
        x = rng.uniform(-1.5, 1.5, arity)
        v, g = ex.value_and_grad(e, x)
        v_ref, g_ref = symbolic_value_and_grad(e, x)
        assert v == pytest.approx(v_ref, rel=1e-12, abs=1e-12)
        np.testing.assert_allclose(g, g_ref, rtol=1e-10, atol=1e-12)


def test_gradient_matches_extended_precision_differences():
    import mpmath

    # exp(x0 * x1) / (1 + x0^2) + log(1 + x1^2)
    e = Add(Div(Exp(Mul(x0, x1)), Add(Const(1.0), Mul(x0, x0))), Log(Add(Const(1.0), Mul(x1, x1))))

    def f(v):
        a, b = v
        return mpmath.exp(a * b) / (1 + a * a) + mpmath.log(1 + b * b)

    x = [0.3, -1.2]
    np.testing.assert_allclose(ex.grad_expr(e, x), mp_central_difference(f, x), rtol=1e-14)


@given(safe_exprs(2), points(2))
def test_materialized_derivative_evaluates_to_gradient(e, x):
    g = ex.grad_expr(e, x)
    for k in range(2):
        d = ex.derivative(e, k)
        assert isinstance(d, ex.Expr)
        assert ex.eval_expr(d, x) == pytest.approx(g[k], rel=1e-12, abs=1e-12)


@given(safe_exprs(3), points(3))
def test_evaluation_is_deterministic(e, x):
    a = ex.value_and_grad(e, x)
    b = ex.value_and_grad(e, x)
    assert a[0] == b[0] or (math.isnan(a[0]) and math.isnan(b[0]))
    assert np.array_equal(a[1], b[1], equal_nan=True)


# ---------------------------------------------------------- structure


@given(safe_exprs(3))
def test_text_round_trip(e):
    assert ex.parse_expr(ex.to_text(e)) == e


def test_text_form():
    assert ex.to_text(Add(x0, Const(2.0))) == "(add (var 0) (const 2.0))"
    assert ex.to_text(Affine((1.0, -2.0), 0.5)) == "(affine (1.0 -2.0) 0.5)"


@pytest.mark.parametrize("bad", ["(add (var 0))", "(pow (var 0) (var 1))", "(add (var 0) (var 1)", "(var 0) (var 1)", ")"])
def test_text_errors(bad):
    with pytest.raises(ValueError):
        ex.parse_expr(bad)


@given(safe_exprs(2), points(2), points(2))
def test_substitute_composes(e, x, inner_shift):
    # e(x0 + a, x1 * b) equals e evaluated at the transformed point
    a, b = inner_shift
    repl = [Add(x0, Const(a)), Mul(x1, Const(b))]
    composed = ex.substitute(e, repl)
    assert ex.eval_expr(composed, x) == ex.eval_expr(e, [x[0] + a, x[1] * b])


def test_remap_and_variables():
    e = Add(Var(2), Mul(Var(5), Var(2)))
    assert ex.variables(e) == {2, 5}
    r = ex.remap(e, {2: 0, 5: 1})
    assert ex.variables(r) == {0, 1}
    assert ex.required_arity(r) == 2
    with pytest.raises(ValueError):
        ex.remap(Affine((1.0,), 0.0), {0: 1})


def test_walk_preorder_and_node_index():
    inner = Mul(x0, x1)
    e = Sub(Exp(inner), x0)
    kinds = [type(n).__name__ for n in ex.walk(e)]
    assert kinds[:3] == ["Sub", "Exp", "Mul"]
    assert ex.node_index(e, inner) == 2


def test_nodes_are_immutable_and_hashable():
    e = Add(x0, Const(1.0))
    with pytest.raises(AttributeError):
        e.left = x1
    assert hash(e) == hash(Add(x0, Const(1.0)))
