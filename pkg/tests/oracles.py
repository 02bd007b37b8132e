"""Independent reference computations used to derive expected values.

Nothing here imports the evaluation or differentiation code under test: the
oracles rebuild each quantity from a different route (symbolic calculus,
extended-precision arithmetic, a generic NLP solver, adaptive quadrature).
"""

from __future__ import annotations

import mpmath
import numpy as np
import sympy
from scipy import integrate, optimize

from seldiff.expr import Add, Affine, Const, Div, Exp, Log, Mul, Sub, Var


def to_sympy(e, symbols):
    """Structural translation of an expression tree to sympy (no evaluation by seldiff)."""
    if isinstance(e, Const):
        return sympy.Float(e.value, 30) if e.value != int(e.value) else sympy.Integer(int(e.value))
    if isinstance(e, Var):
        return symbols[e.index]
    if isinstance(e, Affine):
        acc = sympy.Float(e.offset, 30)
        for c, s in zip(e.coeffs, symbols):
            acc = acc + sympy.Float(c, 30) * s
        return acc
    if isinstance(e, Add):
        return to_sympy(e.left, symbols) + to_sympy(e.right, symbols)
    if isinstance(e, Sub):
        return to_sympy(e.left, symbols) - to_sympy(e.right, symbols)
    if isinstance(e, Mul):
        return to_sympy(e.left, symbols) * to_sympy(e.right, symbols)
    if isinstance(e, Div):
        return to_sympy(e.left, symbols) / to_sympy(e.right, symbols)
    if isinstance(e, Exp):
        return sympy.exp(to_sympy(e.arg, symbols))
    if isinstance(e, Log):
        return sympy.log(to_sympy(e.arg, symbols))
    raise TypeError(type(e))


def symbolic_value_and_grad(e, x, digits=40):
    """Value and gradient from sympy differentiation evaluated at ``digits`` precision."""
    syms = sympy.symbols(f"x0:{len(x)}")
    f = to_sympy(e, syms)
    subs = {s: sympy.Float(repr(float(v)), digits) for s, v in zip(syms, x)}
    val = float(f.evalf(digits, subs=subs))
    grad = np.array([float(sympy.diff(f, s).evalf(digits, subs=subs)) for s in syms])
    return val, grad


def mp_central_difference(fn, x, h="1e-20", dps=60):
    """Central differences in mpmath at ``dps`` digits; ``fn`` takes a list of mpf."""
    with mpmath.workdps(dps):
        h = mpmath.mpf(h)
        base = [mpmath.mpf(repr(float(v))) for v in x]
        out = []
        for k in range(len(base)):
            up = list(base)
            dn = list(base)
            up[k] += h
            dn[k] -= h
            out.append(float((fn(up) - fn(dn)) / (2 * h)))
    return np.array(out)


def slsqp_min_norm(G):
    """Min-norm point of conv(rows of G) by SLSQP over the simplex.

    Started from the barycentre and from every vertex; the best result wins.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    scale = float(np.abs(G).max()) or 1.0
    G = G / scale  # SLSQP stops early on tiny objectives
    n = len(G)
    starts = [np.full(n, 1.0 / n)] + list(np.eye(n))
    best = None
    for w0 in starts:
        res = optimize.minimize(
            lambda w: 0.5 * float(np.dot(w @ G, w @ G)),
            w0,
            jac=lambda w: G @ (w @ G),
            bounds=[(0.0, 1.0)] * n,
            constraints=[{"type": "eq", "fun": lambda w: np.sum(w) - 1.0, "jac": lambda w: np.ones(n)}],
            method="SLSQP",
            options={"ftol": 1e-16, "maxiter": 1000},
        )
        if best is None or res.fun < best.fun:
            best = res
    w = best.x
    return scale * (w @ G), w


def adjoint_loop(p, m, ds):
    """Backward sweep v[j] += v[i] * d_i[j] run directly on the vectors, one row per output node."""
    rows = []
    for out in range(m):
        v = [0.0] * m
        v[out] = 1.0
        for i in range(m - 1, p - 1, -1):
            vi = v[i]
            if vi == 0.0:
                continue
            v[i] = 0.0
            for j in range(i):
                v[j] += vi * ds[i - p][j]
        rows.append(v[:p])
    return np.array(rows)


def piecewise_integral(dfdt, breakpoints, lo=0.0, hi=1.0):
    """Adaptive quadrature of a scalar derivative, split at known kinks."""
    cuts = [lo] + sorted(b for b in breakpoints if lo < b < hi) + [hi]
    total = 0.0
    for a, b in zip(cuts, cuts[1:]):
        val, _ = integrate.quad(dfdt, a, b, epsabs=1e-14, epsrel=1e-14, limit=200)
        total += val
    return total
