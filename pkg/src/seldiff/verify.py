"""Numerical checks of the integral identities satisfied by selection gradients."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import expr as ex
from . import selection as sel
from .expr import DomainFault
from .program import scalar_view
from .setfield import active_generators, fd_gradient, min_norm_point

SCAN_RESOLUTION = 1024
BISECT_TOL = 1e-12
SWITCH_WARN = 10_000
GL_ORDER = 16

RULES = ("selection", "min-norm", "random", "max-inner", "min-inner")

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(GL_ORDER)


class SwitchOverflowWarning(RuntimeWarning):
    pass


@dataclass
class PiecewisePath:
    """Polyline through ``vertices`` with parameter breakpoints 0 = t_0 < ... < t_N = 1."""

    vertices: np.ndarray
    breakpoints: np.ndarray = None
    degenerate: bool = False

    def __post_init__(self):
        self.vertices = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        n = len(self.vertices) - 1
        if n < 1:
            raise ValueError("a path needs at least two vertices")
        if self.breakpoints is None:
            self.breakpoints = np.linspace(0.0, 1.0, n + 1)
        self.breakpoints = np.asarray(self.breakpoints, dtype=float)
        if len(self.breakpoints) != n + 1 or self.breakpoints[0] != 0.0 or self.breakpoints[-1] != 1.0:
            raise ValueError("breakpoints must run from 0 to 1, one per vertex")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        repeated = np.any(np.all(np.diff(self.vertices, axis=0) == 0, axis=1))
        if repeated and not self.degenerate:
            raise ValueError("consecutive vertices coincide; pass degenerate=True to allow it")

    @property
    def segments(self):
        return [(self.vertices[i], self.vertices[i + 1]) for i in range(len(self.vertices) - 1)]

    @property
    def closed(self):
        return bool(np.array_equal(self.vertices[0], self.vertices[-1]))

    def __call__(self, t):
        i = min(int(np.searchsorted(self.breakpoints, t, side="right")) - 1, len(self.vertices) - 2)
        t0, t1 = self.breakpoints[i], self.breakpoints[i + 1]
        s = (t - t0) / (t1 - t0)
        a, b = self.vertices[i], self.vertices[i + 1]
        return a + s * (b - a)

    def concat(self, other: "PiecewisePath") -> "PiecewisePath":
        if not np.array_equal(self.vertices[-1], other.vertices[0]):
            raise ValueError("paths do not join")
        return PiecewisePath(np.vstack([self.vertices, other.vertices[1:]]), degenerate=self.degenerate or other.degenerate)

    @classmethod
    def from_json(cls, doc):
        if isinstance(doc, str):
            doc = json.loads(doc)
        if isinstance(doc, dict):
            return cls(doc["vertices"], doc.get("breakpoints"), doc.get("degenerate", False))
        return cls(doc)

    def to_json(self):
        return {"schema_version": 1, "vertices": self.vertices.tolist(), "breakpoints": self.breakpoints.tolist()}


def segment_path(a, b) -> PiecewisePath:
    return PiecewisePath([np.ravel(a), np.ravel(b)])


@dataclass
class QuadratureReport:
    estimate: float
    difference: float
    residual: float
    subsegments: int
    switches: list
    rule: str

    def ok(self, tol=1e-8):
        return self.residual <= tol * (1.0 + abs(self.difference))

    def to_dict(self):
        d = asdict(self)
        d["schema_version"] = 1
        return d


# ---------------------------------------------------------- switch detection


def _index_or_none(view, y):
    try:
        return view.index(y)
    except (DomainFault, sel.TotalityError, OverflowError):
        return None


def detect_switch_points(target, a, b, resolution=SCAN_RESOLUTION, tol=BISECT_TOL) -> list:
    """Parameters s in (0, 1) where the index of target changes along a -> b.

    The segment is scanned at ``1/resolution``; each change is bisected to
    ``tol``.  Several changes inside one scan cell count as one, and so do
    changes closer than ``2 * tol`` (an isolated index on a grid point).
    """
    view = scalar_view(target)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    ts = np.arange(resolution + 1) / resolution
    idx = [_index_or_none(view, a + t * d) for t in ts]
    out = []
    for k in range(resolution):
        if idx[k] == idx[k + 1]:
            continue
        lo, hi = ts[k], ts[k + 1]
        left = idx[k]
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if _index_or_none(view, a + mid * d) == left:
                lo = mid
            else:
                hi = mid
        out.append(float(0.5 * (lo + hi)))
    out = _merge_close(out, 2 * tol)
    if len(out) > SWITCH_WARN:
        warnings.warn(f"{len(out)} index switches on one segment", SwitchOverflowWarning, stacklevel=2)
    return out


def _merge_close(points, gap):
    groups = []
    for s in points:
        if groups and s - groups[-1][-1] <= gap:
            groups[-1].append(s)
        else:
            groups.append([s])
    return [float(0.5 * (g[0] + g[-1])) for g in groups]


# ---------------------------------------------------------- quadrature


def _rule_vector(view, target, y, rule, direction, rng, tol_active):
    if rule == "selection":
        return view.grad(y)
    G = active_generators(target, y, tol_active).generators
    if rule == "min-norm":
        return min_norm_point(G).point
    if rule == "random":
        return G[rng.integers(len(G))]
    inner = G @ direction
    if rule == "max-inner":
        return G[int(np.argmax(inner))]
    if rule == "min-inner":
        return G[int(np.argmin(inner))]
    raise ValueError(f"unknown selection rule {rule!r}; expected one of {RULES}")


def _pieces(switches):
    cuts = [0.0] + sorted(switches) + [1.0]
    return [(lo, hi) for lo, hi in zip(cuts, cuts[1:]) if hi > lo]


def integrate_selection_gradient(target, path, rule="selection", rng=None, tol_active=None) -> QuadratureReport:
    """Integrate <gamma'(t), v(gamma(t))> along a polyline.

    ``v`` is picked from D_f by ``rule``.  Each segment is split at index
    switches and every piece gets 16-point Gauss-Legendre panels (one per
    1/8 of the segment parameter, at least one).
    """
    if rule not in RULES:
        raise ValueError(f"unknown selection rule {rule!r}; expected one of {RULES}")
    if not isinstance(path, PiecewisePath):
        path = PiecewisePath(path)
    rng = np.random.default_rng(0) if rng is None else rng
    view = scalar_view(target)
    total = 0.0
    pieces = 0
    switches_t = []
    for n, (a, b) in enumerate(path.segments):
        d = b - a
        if not np.any(d):
            continue
        sw = detect_switch_points(target, a, b)
        t0, t1 = path.breakpoints[n], path.breakpoints[n + 1]
        switches_t.extend(t0 + s * (t1 - t0) for s in sw)
        for lo, hi in _pieces(sw):
            pieces += 1
            panels = max(1, math.ceil((hi - lo) * 8))
            edges = np.linspace(lo, hi, panels + 1)
            for p0, p1 in zip(edges, edges[1:]):
                half = 0.5 * (p1 - p0)
                mid = 0.5 * (p1 + p0)
                acc = 0.0
                for node, w in zip(_GL_NODES, _GL_WEIGHTS):
                    y = a + (mid + half * node) * d
                    v = _rule_vector(view, target, y, rule, d, rng, tol_active)
                    acc += w * float(np.dot(v, d))
                total += half * acc
    diff = view.value(path.vertices[-1]) - view.value(path.vertices[0])
    return QuadratureReport(total, diff, abs(total - diff), pieces, switches_t, rule)


# ---------------------------------------------------------- chain rule


@dataclass
class ChainRuleCheck:
    discrepancy: float
    scale: float
    composed: np.ndarray
    product: np.ndarray

    @property
    def relative(self):
        return self.discrepancy / (1.0 + self.scale)

    def ok(self, tol=1e-12):
        return self.discrepancy <= tol * (1.0 + self.scale)


def _as_list(F):
    return [F] if isinstance(F, sel.SelectionFunction) else list(F)


def check_chain_rule(F1, F2, x, cap=sel.DEFAULT_BRANCH_CAP) -> ChainRuleCheck:
    """Selection Jacobian of F1 o F2 against J_F1(F2(x)) @ J_F2(x).

    F1 and F2 are selection functions or lists of them (vector maps); the
    arity of F1's coordinates equals the number of coordinates of F2.
    """
    outer = _as_list(F1)
    inner = _as_list(F2)
    pt = ex._as_point(x)
    composed = [sel.compose(g, inner, cap) for g in outer]
    J_comp = sel.selection_jacobian(composed, pt)
    y = [F.value(pt) for F in inner]
    J_prod = sel.selection_jacobian(outer, y) @ sel.selection_jacobian(inner, pt)
    disc = float(np.max(np.abs(J_comp - J_prod)))
    return ChainRuleCheck(disc, float(np.max(np.abs(J_prod))), J_comp, J_prod)


# ---------------------------------------------------------- a.e. gradient


@dataclass
class BoundaryCertificate:
    point: tuple
    boundary_point: tuple
    distance: float
    coordinate: int
    indices: tuple


@dataclass
class AEReport:
    n_points: int
    disagreements: int
    failures: int  # disagreements without a boundary certificate
    certificates: list = field(default_factory=list)
    uncertified: list = field(default_factory=list)

    @property
    def failure_fraction(self):
        return self.failures / self.n_points if self.n_points else 0.0


def _certify(view, y, h, dist_tol):
    base = _index_or_none(view, y)
    for k in range(len(y)):
        for sign in (1.0, -1.0):
            z = y.copy()
            z[k] += sign * h
            other = _index_or_none(view, z)
            if other == base:
                continue
            lo, hi = 0.0, 1.0
            while (hi - lo) * h > BISECT_TOL:
                mid = 0.5 * (lo + hi)
                w = y.copy()
                w[k] += sign * mid * h
                if _index_or_none(view, w) == base:
                    lo = mid
                else:
                    hi = mid
            bp = y.copy()
            bp[k] += sign * hi * h
            dist = hi * h
            if dist <= dist_tol:
                return BoundaryCertificate(tuple(y), tuple(bp), dist, k, (base, other))
    return None


def certify_boundary(target, y, h=1e-6, dist_tol=1e-6):
    """Bisection certificate for an index switch within ``dist_tol`` of ``y``.

    Probes each coordinate direction up to ``h`` away; returns None when the
    active index is constant along the whole stencil.
    """
    view = scalar_view(target)
    return _certify(view, np.array(ex._as_point(y)), h, dist_tol)


def check_gradient_ae(target, n_points=10_000, rng=None, low=-1.0, high=1.0, points=None, h=1e-6, rtol=1e-5, dist_tol=1e-6):
    """Compare selection gradients with central differences at random points.

    Points come from ``points`` or uniformly from the box [low, high]^p.  A
    disagreement is certified when an index switch lies within ``dist_tol``
    of the point along the finite-difference stencil.
    """
    view = scalar_view(target)
    if points is None:
        rng = np.random.default_rng(0) if rng is None else rng
        points = rng.uniform(low, high, (n_points, view.arity))
    points = np.atleast_2d(np.asarray(points, dtype=float))
    report = AEReport(len(points), 0, 0)
    for y in points:
        try:
            g = view.grad(y)
            fd = fd_gradient(view.value, y, h)
        except (DomainFault, OverflowError):
            report.n_points -= 1
            continue
        if np.all(np.abs(g - fd) <= rtol * (1.0 + np.abs(g))):
            continue
        report.disagreements += 1
        cert = _certify(view, y.copy(), h, dist_tol)
        if cert is None:
            report.failures += 1
            report.uncertified.append(tuple(y))
        else:
            report.certificates.append(cert)
    return report
