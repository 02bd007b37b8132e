import json
import numpy as np
import pytest
from hypothesis import given
from strategies import seeds
from oracles import piecewise_integral

from seldiff import fixtures
from seldiff import selection as sel
from seldiff.verify import (
    RULES,
    PiecewisePath,
    check_chain_rule,
    certify_boundary,
    check_gradient_ae,
    detect_switch_points,
    integrate_selection_gradient,
    segment_path,
)

# ---------------------------------------------------------- paths


def test_path_evaluation_and_breakpoints():
    path = PiecewisePath([[0.0, 0.0], [1.0, 0.0], [1.0, 2.0]])
    assert path.breakpoints.tolist() == [0.0, 0.5, 1.0]
    assert path(0.25).tolist() == [0.5, 0.0]
    assert path(0.75).tolist() == [1.0, 1.0]
    assert not path.closed


def test_path_validation():
    with pytest.raises(ValueError):
        PiecewisePath([[0.0]])
    with pytest.raises(ValueError):
        PiecewisePath([[0.0], [1.0]], breakpoints=[0.0, 0.5])
    with pytest.raises(ValueError):
        PiecewisePath([[0.0], [0.0], [1.0]])
    assert PiecewisePath([[0.0], [0.0], [1.0]], degenerate=True).degenerate


def test_path_json_and_concat():
    a = segment_path([0.0], [1.0])
    b = segment_path([1.0], [0.0])
    loop = a.concat(b)
    assert loop.closed
    again = PiecewisePath.from_json(json.dumps(loop.to_json()))
    assert again.vertices.tolist() == loop.vertices.tolist()
    assert PiecewisePath.from_json("[[0], [2]]").vertices.tolist() == [[0.0], [2.0]]
    with pytest.raises(ValueError):
        a.concat(a)


# ---------------------------------------------------------- switch detection


def test_relu3_switch_at_midpoint():
    sw = detect_switch_points(fixtures.relu3_program(), [-1.0], [1.0])
    assert len(sw) == 1 and abs(sw[0] - 0.5) <= 1e-12


def test_smooth_function_has_no_switches():
    assert detect_switch_points(fixtures.square_program(), [-3.0], [2.0]) == []


def test_switches_of_max_on_a_diagonal_crossing():
    # max(x, y) along (-1, 1) -> (1, -1) switches where x = y, at s = 0.5
    sw = detect_switch_points(sel.max2(), [-1.0, 1.0], [1.0, -1.0])
    assert len(sw) == 1 and abs(sw[0] - 0.5) <= 1e-12


# ---------------------------------------------------------- quadrature


@pytest.mark.parametrize("rule", RULES)
def test_zero_program_integrates_to_zero(rule):
    path = PiecewisePath([[-1.0], [0.0], [2.0], [-0.5]])
    rep = integrate_selection_gradient(fixtures.zero_program(), path, rule, np.random.default_rng(0))
    assert rep.difference == 0.0
    assert rep.residual <= 1e-10


def test_max_integral_against_adaptive_quadrature():
    a, b = np.array([-1.0, 0.3]), np.array([0.8, -0.4])
    d = b - a

    def dfdt(t):
        x = a + t * d
        return d[0] if x[0] >= x[1] else d[1]

    # x0 = x1 where -1 + 1.8 t = 0.3 - 0.7 t
    kink = 1.3 / 2.5
    ref = piecewise_integral(dfdt, [kink])
    rep = integrate_selection_gradient(fixtures.max_program(), segment_path(a, b))
    assert rep.estimate == pytest.approx(ref, abs=1e-12)
    assert rep.ok(1e-10)


def test_bumpy_integral_against_adaptive_quadrature():
    # relu(sin-like smooth piece): relu(x0 * x1 - 0.1) along a segment, derivative by hand
    b_ = fixtures.ProgramBuilder(2)
    u = b_.smooth(sel.Var(0) * sel.Var(1) - 0.1, [1, 2])
    P = b_.build([b_.apply(sel.relu(), [u])])
    a, b = np.array([-0.5, -1.0]), np.array([1.0, 0.9])
    d = b - a

    def dfdt(t):
        x = a + t * d
        g = x[0] * x[1] - 0.1
        return 0.0 if g <= 0 else d[0] * x[1] + d[1] * x[0]

    # roots of (a0 + t d0)(a1 + t d1) = 0.1
    roots = np.roots([d[0] * d[1], a[0] * d[1] + a[1] * d[0], a[0] * a[1] - 0.1]).real
    ref = piecewise_integral(dfdt, list(roots))
    for rule in RULES:
        rep = integrate_selection_gradient(P, segment_path(a, b), rule, np.random.default_rng(1))
        assert rep.estimate == pytest.approx(ref, abs=1e-12)
        assert len(rep.switches) == sum(1 for r in roots if 0 < r < 1)


@given(seeds)
def test_random_piecewise_loops_integrate_to_zero(seed):
    rng = np.random.default_rng(seed)
    P = fixtures.random_piecewise_program(rng)
    pts = rng.uniform(-1.5, 1.5, (3, 2))
    loop = PiecewisePath(np.vstack([pts, pts[:1]]))
    rep = integrate_selection_gradient(P, loop, "min-norm")
    assert rep.difference == 0.0
    assert rep.residual <= 1e-8


def test_unknown_rule():
    with pytest.raises(ValueError):
        integrate_selection_gradient(sel.relu(), segment_path([0.0], [1.0]), "largest")


def test_report_to_dict():
    rep = integrate_selection_gradient(sel.relu(), segment_path([-1.0], [1.0]))
    d = rep.to_dict()
    assert d["schema_version"] == 1 and d["rule"] == "selection"
    assert d["subsegments"] == 2


# ---------------------------------------------------------- chain rule


def test_identity_composition():
    F = [sel.identity(2, 0), sel.identity(2, 1)]
    assert check_chain_rule(F, F, [0.3, 0.4]).discrepancy == 0.0


def test_deep_random_composition():
    rng = np.random.default_rng(12)
    for _ in range(10):
        F = fixtures.random_selection(rng, 1, depth=1)
        inner = F
        for _ in range(5):
            inner = sel.compose(fixtures.random_selection(rng, 1, depth=1), [inner], cap=10**6)
        outer = fixtures.random_selection(rng, 1, depth=1)
        chk = check_chain_rule(outer, inner, rng.uniform(-1, 1, 1))
        assert chk.ok(1e-12), chk


def test_vector_chain_rule_through_sort():
    hi, lo = sel.sort2()
    outer = sel.smooth(sel.Var(0) * sel.Var(1) + sel.Var(0), 2)
    chk = check_chain_rule(outer, [hi, lo], [0.2, 0.7])
    assert chk.ok(1e-12)
    # d/dx of hi*lo + hi at (0.2, 0.7) with hi = x1, lo = x0
    np.testing.assert_allclose(chk.composed, [[0.7, 0.2 + 1.0]], atol=1e-15)


# ---------------------------------------------------------- a.e. gradient


def test_two_branch_zero_has_no_failures():
    rep = check_gradient_ae(sel.zero_two_branch(), 10_000, np.random.default_rng(0))
    assert rep.failures == 0 and rep.failure_fraction == 0.0


def test_guard_curve_in_the_plane():
    # max(x, y) has a one-dimensional guard surface x = y
    rep = check_gradient_ae(fixtures.max_program(), 10_000, np.random.default_rng(1))
    assert rep.failures == 0


def test_engineered_boundary_points_are_certified():
    pts = [[0.0], [1e-9], [-1e-9]]
    rep = check_gradient_ae(fixtures.relu_program(), points=pts)
    assert rep.disagreements == 3 and rep.failures == 0
    for cert in rep.certificates:
        assert cert.distance <= 1e-6
        assert abs(cert.boundary_point[0]) <= 1e-6


def test_artificial_slope_is_certified_at_origin():
    rep = check_gradient_ae(fixtures.zero_program(), points=[[0.0]])
    assert rep.disagreements == 1 and len(rep.certificates) == 1


def test_uncertified_disagreement_is_a_failure():
    # a coarse stencil on a cubic misses the slope with no index change nearby
    cube = sel.smooth(sel.Var(0) * sel.Var(0) * sel.Var(0), 1)
    rep = check_gradient_ae(cube, points=[[1.0]], h=0.5)
    assert rep.failures == 1 and rep.uncertified == [(1.0,)]


def test_certify_boundary_near_and_far():
    cert = certify_boundary(fixtures.relu3_program(), [0.0])
    assert cert is not None and cert.distance <= 1e-6
    cert = certify_boundary(fixtures.zero_program(), [2e-7])
    assert cert is not None and abs(cert.boundary_point[0]) <= 1e-6
    assert certify_boundary(fixtures.relu_program(), [0.5]) is None
