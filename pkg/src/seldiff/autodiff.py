"""Forward and backward algorithmic differentiation over evaluation traces."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import selection as sel
from .expr import Var
from .program import EvalTrace, Program, evaluate

FORWARD = "forward"
BACKWARD = "backward"


@dataclass(frozen=True)
class AdResult:
    jacobian: np.ndarray  # q x p
    mode: str
    trace: EvalTrace

    @property
    def gradient(self) -> np.ndarray:
        if self.jacobian.shape[0] != 1:
            raise ValueError("gradient is only defined for scalar programs")
        return self.jacobian[0]


def forward_ad(P: Program, trace: EvalTrace) -> AdResult:
    p, m = P.p, P.m
    tangents = [None] * m
    for k in range(p):
        row = np.zeros(p)
        row[k] = 1.0
        tangents[k] = row
    for k in range(p + 1, m + 1):
        d = trace.local_grads[k - 1]
        acc = np.zeros(p)
        for pos, j in enumerate(P.preds(k)):
            acc = acc + tangents[j - 1] * d[pos]
        tangents[k - 1] = acc
    jac = np.vstack([tangents[o - 1] for o in P.outputs])
    return AdResult(jac, FORWARD, trace)


def _adjoint(P: Program, trace: EvalTrace, out: int) -> list:
    v = [0.0] * (P.m + 1)  # slot 0 unused, ids are 1-based
    v[out] = 1.0
    for t in range(P.m, P.p, -1):
        d = trace.local_grads[t - 1]
        vt = v[t]
        for pos, j in enumerate(P.preds(t)):
            v[j] = v[j] + vt * d[pos]
    return v[1 : P.p + 1]


def backward_ad(P: Program, trace: EvalTrace) -> AdResult:
    """One reverse sweep per output node."""
    rows = [_adjoint(P, trace, o) for o in P.outputs]
    return AdResult(np.array(rows, dtype=float), BACKWARD, trace)


def grad(P: Program, x, mode=BACKWARD) -> np.ndarray:
    """AD output of a scalar program at x."""
    return _run(P, x, mode).gradient


def jacobian(P: Program, x, mode=BACKWARD) -> np.ndarray:
    return _run(P, x, mode).jacobian


def _run(P, x, mode):
    if mode not in (FORWARD, BACKWARD):
        raise ValueError(f"unknown mode {mode!r}; expected {FORWARD!r} or {BACKWARD!r}")
    _, trace = evaluate(P, x)
    return backward_ad(P, trace) if mode == BACKWARD else forward_ad(P, trace)


class ModeCheck(NamedTuple):
    discrepancy: float
    scale: float

    @property
    def relative(self):
        return self.discrepancy / (1.0 + self.scale)

    def ok(self, tol=1e-12):
        return self.discrepancy <= tol * (1.0 + self.scale)


def check_modes_agree(P: Program, x) -> ModeCheck:
    """Max-abs difference between forward and backward Jacobians at x."""
    _, trace = evaluate(P, x)
    fw = forward_ad(P, trace).jacobian
    bw = backward_ad(P, trace).jacobian
    return ModeCheck(float(np.max(np.abs(fw - bw))), float(np.max(np.abs(bw))))


# ------------------------------------------------------ backprop identity


class IdentityCheck(NamedTuple):
    discrepancy: float
    scale: float

    def ok(self, tol=1e-12):
        return self.discrepancy <= tol * max(1.0, self.scale)


def check_backprop_identity(p: int, m: int, ds) -> IdentityCheck:
    """Compare P_p prod (I - e_i e_i^T + d_i e_i^T) with P_p prod (I + d_i e_i^T).

    ``ds`` holds the vectors d_{p+1}, ..., d_m (each of length m), in order.
    """
    ds = [np.asarray(d, dtype=float) for d in ds]
    if not 0 < p < m:
        raise ValueError("need 0 < p < m")
    if len(ds) != m - p or any(d.shape != (m,) for d in ds):
        raise ValueError(f"expected {m - p} vectors of length {m}")
    eye = np.eye(m)
    proj = np.diag([1.0] * p + [0.0] * (m - p))
    left = proj.copy()
    right = proj.copy()
    for i, d in zip(range(p, m), ds):  # 0-based coordinate of node i+1
        e = eye[i]
        left = left @ (eye - np.outer(e, e) + np.outer(d, e))
        right = right @ (eye + np.outer(d, e))
    diff = float(np.max(np.abs(left - right)))
    scale = float(max(np.max(np.abs(left)), np.max(np.abs(right))))
    return IdentityCheck(diff, scale)


# ------------------------------------------------------ derivative prescription


def prescribe_derivative(P: Program, s0, r: float, coord: int = 0) -> Program:
    """Append r * zero(x_coord - s0_coord) to a scalar program.

    zero(u) = relu(-u) + u - relu(u) is identically 0, but its backward-mode
    derivative at u = 0 is 1, so AD at s0 moves by r along ``coord``.
    """
    if P.q != 1:
        raise ValueError("prescribe_derivative needs a scalar program")
    s0 = np.ravel(np.asarray(s0, dtype=float))
    shift = float(s0[coord]) if s0.size > 1 else float(s0[0])
    p = P.p
    u = Var(0)
    # u = x_k - s sits right after the inputs so its adjoint contribution
    # reaches x_k after every original one: result is fl(grad + r)
    n_u = p + 1
    pr = [(coord + 1,)]
    g = [sel.smooth(u - shift, 1)]
    for ids, F in zip(P.pr, P.g):
        pr.append(tuple(j if j <= p else j + 1 for j in ids))
        g.append(F)
    y = P.m + 1
    pr += [(n_u,), (y + 1,), (n_u,), (y + 2, n_u, y + 3), (y, y + 4)]
    g += [
        sel.smooth(-u, 1),
        sel.relu(),
        sel.relu(),
        sel.smooth((Var(0) + Var(1)) - Var(2), 3),
        sel.smooth(Var(0) + float(r) * Var(1), 2),
    ]
    name = f"{P.name or 'program'}+{r}*zero"
    return Program(p, 1, pr, g, name)
