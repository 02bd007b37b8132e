"""The set-valued field D_f, minimum-norm points and criticality tests.

D_f(x) is the convex hull of the gradients of all branches (for programs: all
per-node branch assignments) whose value agrees with f(x).  Criticality
compares 0 against D_f(x) and against a sampled outer approximation of the
Clarke subgradient.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import expr as ex
from .autodiff import backward_ad
from .expr import DomainFault
from .program import Program, evaluate, scalar_view
from .selection import SelectionFunction

ASSIGNMENT_CAP = 100_000
REL_ACTIVE = 1e-9

NON_CRITICAL = "non-critical"
CLARKE_CRITICAL = "Clarke-critical"
ARTIFICIAL_CRITICAL = "artificial-critical"


class InsufficientSamples(RuntimeError):
    def __init__(self, certified, requested):
        self.certified = certified
        self.requested = requested
        super().__init__(f"only {certified} of {requested} samples certified differentiable")


@dataclass
class SetValuedGradient:
    point: tuple
    generators: np.ndarray  # one flattened generator per row
    shape: tuple  # shape of one generator (p,) or (q, p)
    active: list  # branch id, or per-node branch tuple for programs
    tol_active: float
    truncated: bool = False
    selection_index: object = None

    def __len__(self):
        return len(self.active)

    def unique(self, decimals=None) -> np.ndarray:
        """Distinct generator rows (exact comparison unless ``decimals`` is given)."""
        rows = self.generators if decimals is None else np.round(self.generators, decimals)
        _, first = np.unique(rows, axis=0, return_index=True)
        return self.generators[np.sort(first)]

    def contains(self, v, tol=0.0) -> bool:
        v = np.ravel(np.asarray(v, dtype=float))
        return bool(np.any(np.all(np.abs(self.generators - v) <= tol, axis=1)))

    def matrices(self):
        return [g.reshape(self.shape) for g in self.generators]


def _tolerance(f, tol_active):
    return REL_ACTIVE * (1.0 + abs(f)) if tol_active is None else float(tol_active)


def active_generators(target, x, tol_active=None, cap=ASSIGNMENT_CAP) -> SetValuedGradient:
    """Generators of D_f at x.

    ``target`` is a SelectionFunction, a list of SelectionFunctions sharing
    one index (a vector map), or a Program.  ``tol_active`` is absolute; by
    default 1e-9 * (1 + |f(x)|) per output.
    """
    pt = ex._as_point(x)
    if isinstance(target, Program):
        return _program_generators(target, pt, tol_active, cap)
    if isinstance(target, SelectionFunction):
        return _joint_generators([target], pt, tol_active, flat_shape=(target.arity,))
    Fs = list(target)
    if any(F.m != Fs[0].m or (F.guards is not Fs[0].guards and F.guards != Fs[0].guards) for F in Fs):
        raise ValueError("coordinate functions must share one index")
    return _joint_generators(Fs, pt, tol_active, flat_shape=(len(Fs), Fs[0].arity))


def _joint_generators(Fs, pt, tol_active, flat_shape):
    fx = [F.value(pt) for F in Fs]
    tols = [_tolerance(f, tol_active) for f in fx]
    s = Fs[0].index(pt)
    gens, ids = [], []
    for i in range(Fs[0].m):
        rows = []
        for F, f, tol in zip(Fs, fx, tols):
            branch = F.branches[i]
            try:
                v, g = ex.value_and_grad(branch, pt)
            except (DomainFault, OverflowError):
                rows = None
                break
            if not abs(v - f) <= tol:
                rows = None
                break
            rows.append(g)
        if rows is not None:
            gens.append(np.concatenate(rows))
            ids.append(i + 1)
    return SetValuedGradient(
        tuple(pt), np.array(gens), flat_shape, ids, tols[0] if len(tols) == 1 else max(tols), False, s
    )


def _ancestor_nodes(P):
    need = set(P.outputs)
    for t in range(P.m, P.p, -1):
        if t in need:
            need.update(P.preds(t))
    return need


def _program_generators(P, pt, tol_active, cap):
    _, true = evaluate(P, pt)
    outs = list(P.outputs)
    tols = {o: _tolerance(true.values[o - 1], tol_active) for o in outs}
    live = _ancestor_nodes(P)
    node_tol = [REL_ACTIVE * (1.0 + abs(v)) for v in true.values]

    values = list(true.values[: P.p]) + [0.0] * (P.m - P.p)
    choice = {}
    leaves = []
    truncated = False

    def visit(i):
        nonlocal truncated
        if truncated:
            return
        if i > P.m:
            if all(abs(values[o - 1] - true.values[o - 1]) <= tols[o] for o in outs):
                if len(leaves) >= cap:
                    truncated = True
                    return
                leaves.append(dict(choice))
            return
        F = P.func(i)
        local = tuple(values[j - 1] for j in P.preds(i))
        if i not in live:
            candidates = [true.branches[i - 1]]
        else:
            candidates = range(1, F.m + 1)
        for b in candidates:
            try:
                v = ex._value(F.branches[b - 1], local, {})
            except (ex._Fault, OverflowError):
                continue
            # prune as soon as a node value leaves the trace value
            if i in live and not abs(v - true.values[i - 1]) <= node_tol[i - 1]:
                continue
            values[i - 1] = v
            choice[i] = b
            visit(i + 1)
            if truncated:
                return
        choice.pop(i, None)

    visit(P.p + 1)

    gens, ids = [], []
    for sigma in leaves:
        _, tr = evaluate(P, pt, force=sigma)
        gens.append(backward_ad(P, tr).jacobian.ravel())
        ids.append(tuple(sigma[i] for i in range(P.p + 1, P.m + 1)))
    shape = (P.p,) if P.q == 1 else (P.q, P.p)
    tol = tols[outs[0]] if len(outs) == 1 else max(tols.values())
    return SetValuedGradient(tuple(pt), np.array(gens), shape, ids, tol, truncated, true.branches[P.p:])


# ---------------------------------------------------------- min-norm point


@dataclass
class MinNormResult:
    point: np.ndarray
    norm: float
    weights: np.ndarray  # aligned with the input generator rows

    def optimality_gap(self, generators) -> float:
        """min_i <v*, g_i - v*>; nonnegative at the exact solution."""
        G = np.atleast_2d(np.asarray(generators, dtype=float))
        return float(np.min(G @ self.point - self.point @ self.point))


def _affine_minimizer(B):
    """argmin |B^T mu| over sum(mu) = 1 (rows of B are points)."""
    k = B.shape[0]
    if k == 1:
        return np.ones(1)
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = B @ B.T
    K[:k, k] = 1.0
    K[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:k]


def min_norm_point(generators, tol=1e-10, max_iter=1000) -> MinNormResult:
    """Minimum-norm point of the convex hull of the generator rows (Wolfe's method)."""
    G = np.atleast_2d(np.asarray(generators, dtype=float))
    if G.size == 0:
        raise ValueError("need at least one generator")
    if G.ndim != 2:
        raise ValueError("generators must be a 2-d array of rows")
    U, inverse = np.unique(G, axis=0, return_inverse=True)
    inverse = np.ravel(inverse)
    scale = max(1.0, float(np.max(np.sum(U * U, axis=1))))

    start = int(np.argmin(np.sum(U * U, axis=1)))
    S = [start]
    lam = np.ones(1)
    x = U[start].copy()
    for _ in range(max_iter):
        dots = U @ x
        j = int(np.argmin(dots))
        if x @ x - dots[j] <= tol * scale or j in S:
            break
        S.append(j)
        lam = np.append(lam, 0.0)
        while True:
            mu = _affine_minimizer(U[S])
            if np.all(mu > 1e-14):
                lam = mu
                break
            neg = mu <= 1e-14
            ratios = lam[neg] / (lam[neg] - mu[neg])
            theta = float(np.min(ratios)) if ratios.size else 0.0
            lam = lam + theta * (mu - lam)
            keep = lam > 1e-14
            keep[np.argmax(lam)] = True
            S = [s for s, k in zip(S, keep) if k]
            lam = lam[keep]
            lam = lam / lam.sum()
        x = lam @ U[S]
    weights_u = np.zeros(len(U))
    weights_u[S] = lam
    weights = np.zeros(len(G))
    seen = set()
    for row, u in enumerate(inverse):
        if u not in seen:
            weights[row] = weights_u[u]
            seen.add(u)
    return MinNormResult(x, float(np.linalg.norm(x)), weights)


def distance_to_hull(v, generators) -> float:
    G = np.atleast_2d(np.asarray(generators, dtype=float))
    return min_norm_point(G - np.ravel(v)).norm


# ------------------------------------------------------- Clarke sampling


@dataclass
class ClarkeCloud:
    center: tuple
    radius: float
    requested: int
    points: np.ndarray
    gradients: np.ndarray

    @property
    def certified(self):
        return len(self.gradients)


def _uniform_ball(rng, center, radius, n):
    p = len(center)
    d = rng.standard_normal((n, p))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / p)
    return np.asarray(center) + d * r[:, None]


def fd_gradient(value, y, h):
    y = np.asarray(y, dtype=float)
    out = np.empty(len(y))
    for k in range(len(y)):
        e = np.zeros(len(y))
        e[k] = h
        out[k] = (value(y + e) - value(y - e)) / (2.0 * h)
    return out


def clarke_sample(target, x, radius=1e-3, n_samples=200, rng=None, min_certified=10) -> ClarkeCloud:
    """Gradients at random differentiability points within ``radius`` of x.

    A sample is kept when its selection gradient agrees with central finite
    differences to 1e-5 relative; the step is min(1e-6, radius / 100).
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    F = scalar_view(target)
    h = min(1e-6, radius / 100.0)
    pts, grads = [], []
    for y in _uniform_ball(rng, ex._as_point(x), radius, n_samples):
        try:
            g = F.grad(y)
            fd = fd_gradient(F.value, y, h)
        except (DomainFault, OverflowError):
            continue
        if np.all(np.abs(g - fd) <= 1e-5 * (1.0 + np.abs(g))):
            pts.append(y)
            grads.append(g)
    if len(grads) < min_certified:
        raise InsufficientSamples(len(grads), n_samples)
    return ClarkeCloud(tuple(ex._as_point(x)), radius, n_samples, np.array(pts), np.array(grads))


# ---------------------------------------------------------- classification


@dataclass
class CriticalityReport:
    point: tuple
    d_selection: float
    d_clarke: float
    classification: str
    weights: list
    generators: list
    tol_D: float
    tol_C: float
    tol_active: float
    radius: float
    n_samples: int
    n_certified: int
    truncated: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def selection_critical(self):
        return self.d_selection <= self.tol_D

    def to_dict(self):
        d = asdict(self)
        d["schema_version"] = 1
        return d

    def to_json(self):
        return json.dumps(self.to_dict())


def classify(target, x, tol_D=1e-8, tol_C=1e-3, radius=1e-3, n_samples=200, rng=None, tol_active=None):
    D = active_generators(target, x, tol_active)
    mn = min_norm_point(D.generators)
    cloud = clarke_sample(target, x, radius, n_samples, rng)
    d_c = min_norm_point(cloud.gradients).norm
    if mn.norm > tol_D:
        label = NON_CRITICAL
    elif d_c <= tol_C:
        label = CLARKE_CRITICAL
    else:
        label = ARTIFICIAL_CRITICAL
    return CriticalityReport(
        point=tuple(float(v) for v in ex._as_point(x)),
        d_selection=mn.norm,
        d_clarke=d_c,
        classification=label,
        weights=[float(w) for w in mn.weights],
        generators=D.generators.tolist(),
        tol_D=tol_D,
        tol_C=tol_C,
        tol_active=D.tol_active,
        radius=radius,
        n_samples=n_samples,
        n_certified=cloud.certified,
        truncated=D.truncated,
    )


# ---------------------------------------------------------- closed graph


@dataclass
class ProbeResult:
    max_violation: float
    per_sequence: list


def closed_graph_probe(target, xbar, directions, n_terms=30, ratio=0.5, tol_active=None) -> ProbeResult:
    """Approach xbar along x_k = xbar + ratio^k d and test the limit generators.

    For each direction, every generator at the last term stands in for the
    limit v of a generator sequence; its distance to conv D(xbar) is recorded.
    """
    base = np.array(ex._as_point(xbar))
    hull = active_generators(target, base, tol_active).generators
    out = []
    for d in directions:
        d = np.ravel(np.asarray(d, dtype=float))
        xk = base + ratio**n_terms * d
        gens = active_generators(target, xk, tol_active).generators
        worst = max(distance_to_hull(v, hull) for v in gens)
        out.append(worst)
    return ProbeResult(max(out) if out else 0.0, out)
