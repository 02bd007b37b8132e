import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import adjoint_loop
from strategies import dag_programs, seeds

from seldiff import fixtures
from seldiff import selection as sel
from seldiff.autodiff import (
    backward_ad,
    check_backprop_identity,
    check_modes_agree,
    forward_ad,
    grad,
    jacobian,
    prescribe_derivative,
)
from seldiff.program import ProgramBuilder, evaluate, function_of


# values from the motivating relu example: AD derivative at 0 of five programs
@pytest.mark.parametrize("name, factory, expected", fixtures.RELU_VARIANT_SLOPES)
@pytest.mark.parametrize("mode", ["forward", "backward"])
def test_relu_variant_slopes(name, factory, expected, mode):
    assert grad(factory(), [0.0], mode)[0] == expected


def test_relu3_mode_discrepancy_is_zero():
    assert check_modes_agree(fixtures.relu3_program(), [0.0]).discrepancy == 0.0


def test_relu_chain_modes_agree():
    P = fixtures.relu_chain_program(20)
    for x in np.random.default_rng(5).uniform(-2, 2, 50):
        assert check_modes_agree(P, [x]).ok(1e-12)


@given(dag_programs(), seeds)
def test_forward_equals_backward_on_random_dags(P, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, P.p)
    chk = check_modes_agree(P, x)
    assert chk.ok(1e-12), chk


def test_vector_output_jacobian():
    b = ProgramBuilder(2)
    hi = b.apply(sel.max2(), [1, 2])
    lo = b.apply(sel.min2(), [1, 2])
    P = b.build([hi, lo])
    for mode in ("forward", "backward"):
        assert jacobian(P, [1.0, 3.0], mode).tolist() == [[0.0, 1.0], [1.0, 0.0]]


def test_results_carry_trace_and_mode():
    P = fixtures.relu_program()
    _, trace = evaluate(P, [1.0])
    r = backward_ad(P, trace)
    assert r.mode == "backward" and r.trace is trace
    assert forward_ad(P, trace).gradient.tolist() == [1.0]


def test_unknown_mode():
    with pytest.raises(ValueError):
        grad(fixtures.relu_program(), [0.0], "sideways")


# ---------------------------------------------------------- matrix identity


def _random_ds(rng, p, m, density=None):
    ds = []
    for i in range(p, m):
        d = np.zeros(m)
        d[:i] = rng.standard_normal(i)
        if density is not None:
            d[:i] *= rng.random(i) < density
        ds.append(d)
    return ds


def test_identity_sparse_p3_m10():
    rng = np.random.default_rng(42)
    for _ in range(50):
        chk = check_backprop_identity(3, 10, _random_ds(rng, 3, 10, density=0.3))
        assert chk.ok(1e-12)


@given(st.integers(1, 3), st.integers(1, 9), seeds)
def test_identity_matches_adjoint_sweep(p, extra, seed):
    m = p + extra
    rng = np.random.default_rng(seed)
    ds = _random_ds(rng, p, m)
    eye = np.eye(m)
    proj = np.diag([1.0] * p + [0.0] * (m - p))
    prod = proj.copy()
    for i, d in zip(range(p, m), ds):
        prod = prod @ (eye - np.outer(eye[i], eye[i]) + np.outer(d, eye[i]))
    # row o of the product transposed is the adjoint of node o restricted to the inputs
    sweep = adjoint_loop(p, m, ds)
    np.testing.assert_allclose(prod[:p, :].T, sweep, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(sweep).max()))
    assert check_backprop_identity(p, m, ds).ok(1e-12)


def test_identity_argument_checks():
    with pytest.raises(ValueError):
        check_backprop_identity(3, 3, [])
    with pytest.raises(ValueError):
        check_backprop_identity(1, 3, [np.zeros(3)])


# ---------------------------------------------------------- prescription


def test_prescribe_relu_at_two():
    P = fixtures.relu_program()
    Q = prescribe_derivative(P, 2.0, -1.0)
    assert grad(Q, [2.0])[0] == 0.0
    f, g = function_of(P), function_of(Q)
    for x in np.linspace(-3, 3, 61):
        assert f([x]) == g([x])


def test_prescribe_zero_shift_keeps_derivatives():
    P = fixtures.relu3_program()
    Q = prescribe_derivative(P, 0.7, 0.0)
    for x in np.linspace(-2, 2, 41):
        assert grad(Q, [x]).tolist() == grad(P, [x]).tolist()


@given(st.floats(-2, 2, allow_nan=False), st.floats(-5, 5, allow_nan=False), seeds)
def test_prescribe_shifts_by_exactly_r(s0, r, seed):
    P = fixtures.random_dag_program(np.random.default_rng(seed), p=1, m_max=12)
    Q = prescribe_derivative(P, s0, r)
    g = grad(P, [s0])[0]
    assert grad(Q, [s0])[0] == g + r
    assert check_modes_agree(Q, [s0]).ok(1e-12)


def test_prescribe_multivariate_coordinate():
    P = fixtures.max_program()
    Q = prescribe_derivative(P, [1.0, 0.5], 3.0, coord=1)
    assert grad(Q, [1.0, 0.5]).tolist() == [1.0, 3.0]


def test_prescribe_needs_scalar_program():
    b = ProgramBuilder(1)
    r = b.apply(sel.relu(), [1])
    P = b.build([r, 1])
    with pytest.raises(ValueError):
        prescribe_derivative(P, 0.0, 1.0)
