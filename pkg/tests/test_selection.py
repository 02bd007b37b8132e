import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from strategies import points, random_selections, safe_exprs

from seldiff import selection as sel
from seldiff.expr import Const, DomainFault, Exp, Var

t = Var(0)


# ---------------------------------------------------------- index and value


def test_relu_index_at_origin_is_first_branch():
    assert sel.relu().index([0.0]) == 1


def test_relu_index_positive():
    assert sel.relu().index([0.5]) == 2


def test_two_branch_zero_index_at_origin():
    assert sel.zero_two_branch().index([0.0]) == 2
    assert sel.zero_two_branch().index([0.3]) == 1


@pytest.mark.parametrize("x, want", [(-3.0, 0.0), (2.0, 2.0)])
def test_relu_values(x, want):
    assert sel.relu().value([x]) == want


def test_two_branch_zero_value_and_gradient():
    z = sel.zero_two_branch()
    assert z.value([0.0]) == 0.0
    assert z.gradient([0.0]).tolist() == [1.0]
    assert z.gradient([0.2]).tolist() == [0.0]


def test_relu_gradients():
    assert sel.relu().gradient([0.0]).tolist() == [0.0]
    assert sel.relu().gradient([3.0]).tolist() == [1.0]


def test_first_true_scan_ignores_later_guards():
    F = sel.SelectionFunction(1, (sel.Atom(t, ">="), sel.Atom(t, ">")), (t, 2 * t))
    assert F.index([1.0]) == 1  # both guards hold, first wins


def test_totality_error():
    F = sel.SelectionFunction(1, (sel.Atom(t, ">"),), (t,))
    with pytest.raises(sel.TotalityError):
        F.value([-1.0])


def test_domain_fault_in_guard():
    F = sel.SelectionFunction(1, (sel.atom(sel.ex.Log(t), "<"), sel.TRUE), (t, Const(0.0)))
    with pytest.raises(DomainFault):
        F.index([-1.0])


def test_arity_checks():
    with pytest.raises(ValueError):
        sel.SelectionFunction(1, (sel.TRUE,), (Var(1),))
    with pytest.raises(ValueError):
        sel.relu().value([1.0, 2.0])
    with pytest.raises(ValueError):
        sel.SelectionFunction(1, (), ())


def test_library_values():
    assert sel.abs_().value([-2.5]) == 2.5
    assert sel.abs_().index([0.0]) == 1
    assert sel.max2().value([1.0, 3.0]) == 3.0
    assert sel.min2().value([1.0, 3.0]) == 1.0
    assert sel.relu_strict().index([0.0]) == 2


@given(st.floats(-5, 5, allow_nan=False))
def test_relu_variants_agree_as_functions(x):
    r = max(0.0, x)
    assert sel.relu().value([x]) == r
    assert sel.relu2().value([x]) == pytest.approx(r, abs=1e-15)
    assert sel.relu3().value([x]) == pytest.approx(r, abs=1e-15)
    assert sel.zero().value([x]) == pytest.approx(0.0, abs=1e-15)


def test_relu_variant_derivatives_at_origin():
    assert sel.relu2().gradient([0.0]).tolist() == [1.0]
    assert sel.relu3().gradient([0.0]).tolist() == [0.5]
    assert sel.zero().gradient([0.0]).tolist() == [1.0]


# ---------------------------------------------------------- jacobians


def test_identity_jacobian():
    Fs = [sel.identity(2, 0), sel.identity(2, 1)]
    assert sel.selection_jacobian(Fs, [0.3, -0.7]).tolist() == [[1.0, 0.0], [0.0, 1.0]]


def test_coordinatewise_relu_jacobian():
    Fs = [sel.compose(sel.relu(), [sel.identity(2, k)]) for k in range(2)]
    assert sel.selection_jacobian(Fs, [1.0, -1.0]).tolist() == [[1.0, 0.0], [0.0, 0.0]]


def test_sort2_shares_one_index():
    hi, lo = sel.sort2()
    assert hi.guards is lo.guards
    assert hi.value([1.0, 3.0]) == 3.0 and lo.value([1.0, 3.0]) == 1.0
    assert sel.selection_jacobian([hi, lo], [1.0, 3.0]).tolist() == [[0.0, 1.0], [1.0, 0.0]]


# ---------------------------------------------------------- calculus


@given(random_selections(2), random_selections(2), points(2))
def test_compose_matches_nested_evaluation(F, G, x):
    outer = sel.max2()
    H = sel.compose(outer, [F, G])
    try:
        want = outer.value([F.value(x), G.value(x)])
    except (DomainFault, OverflowError):
        return
    assert H.value(x) == want


@given(random_selections(2), points(2))
def test_compose_gradient_is_chain_rule(F, x):
    outer = sel.relu()
    H = sel.compose(outer, [F])
    try:
        inner_v = F.value(x)
        want = outer.gradient([inner_v])[0] * F.gradient(x)
        got = H.gradient(x)
    except (DomainFault, OverflowError):
        return
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


@given(safe_exprs(2), safe_exprs(2), points(2))
def test_sum_and_product_of_smooth_pieces(a, b, x):
    A, B = sel.smooth(a, 2), sel.smooth(b, 2)
    assert sel.add(A, B).value(x) == A.value(x) + B.value(x)
    assert sel.multiply(A, B).value(x) == A.value(x) * B.value(x)
    assert sel.subtract(A, B).value(x) == A.value(x) - B.value(x)


def test_compose_branch_count_is_product():
    H = sel.compose(sel.max2(), [sel.abs_(), sel.relu()])
    assert H.m == 2 * 3 * 2


def test_compose_shared_index_counted_once():
    hi, lo = sel.sort2()
    H = sel.compose(sel.smooth(Var(0) - Var(1), 2), [hi, lo])
    assert H.m == 2
    assert H.value([1.0, 3.0]) == 2.0


def test_branch_overflow():
    with pytest.raises(sel.BranchOverflow):
        sel.compose(sel.max2(), [sel.abs_(), sel.abs_()], cap=5)


def test_compose_arity_errors():
    with pytest.raises(ValueError):
        sel.compose(sel.max2(), [sel.relu()])
    with pytest.raises(ValueError):
        sel.compose(sel.max2(), [sel.relu(), sel.identity(2)])


def test_scale_and_negate():
    assert sel.scale(sel.relu(), 3.0).value([2.0]) == 6.0
    assert sel.negate(sel.relu()).value([2.0]) == -2.0


# ---------------------------------------------------------- predicates


def test_complement_and_eval():
    p = sel.conj(sel.Atom(t, ">"), sel.Atom(t - 1, "<"))
    q = sel.complement(p)
    for x in (-1.0, 0.0, 0.5, 1.0, 2.0):
        assert sel.eval_pred(p, [x]) != sel.eval_pred(q, [x])
    assert sel.complement(sel.Atom(t, "==")) == sel.Or((sel.Atom(t, "<"), sel.Atom(t, ">")))


def test_empty_conjunction_and_disjunction():
    assert sel.eval_pred(sel.TRUE, [0.0])
    assert not sel.eval_pred(sel.FALSE, [0.0])


def test_unknown_comparison_rejected():
    with pytest.raises(ValueError):
        sel.Atom(t, "!=")


# ---------------------------------------------------------- continuity and text


@pytest.mark.parametrize("factory", [sel.relu, sel.relu2, sel.relu3, sel.zero, sel.abs_, sel.max2, sel.min2, sel.zero_two_branch])
def test_library_functions_are_continuous(factory):
    rep = sel.check_continuity(factory(), np.random.default_rng(3), n_segments=100)
    assert rep.ok


def test_discontinuous_function_detected():
    step = sel.SelectionFunction(1, (sel.Atom(t, "<="), sel.TRUE), (Const(0.0), Const(1.0)))
    rep = sel.check_continuity(step, np.random.default_rng(0), n_segments=20)
    assert not rep.ok
    assert rep.max_jump == pytest.approx(1.0)


@given(random_selections(2))
def test_text_round_trip(F):
    G = sel.from_text(sel.to_text(F))
    assert G.arity == F.arity
    assert G.guards == F.guards and G.branches == F.branches


def test_text_form_of_relu():
    assert sel.to_text(sel.relu()) == "(select 1 (case (le (var 0)) (const 0.0)) (case (and) (var 0)))"


def test_from_text_errors():
    with pytest.raises(ValueError):
        sel.from_text("(choose 1)")
    with pytest.raises(ValueError):
        sel.from_text("(select 1 (case (le (var 0))))")


def test_exp_guard():
    F = sel.SelectionFunction(1, (sel.Atom(Exp(t) - 2, "<"), sel.TRUE), (t, Const(0.6931471805599453)))
    assert F.index([0.5]) == 1 and F.index([1.0]) == 2
