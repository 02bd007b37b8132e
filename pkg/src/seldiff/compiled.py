"""Generated straight-line Python for programs.

The generated functions perform exactly the floating-point operations of the
interpreter (``program.evaluate`` followed by ``autodiff.backward_ad``), in the
same order, so their results compare equal.  Skipped operations are only
additions of exact zeros and multiplications by exact ones.  Any exception
raised by generated code is re-diagnosed by re-running the interpreter.
"""

from __future__ import annotations

import math
import re

from .expr import Add, Affine, Const, Div, Exp, Log, Mul, Sub, Var
from .selection import And, Atom, Or


class _NoGuard(Exception):
    pass


def _num(v: float) -> str:
    if math.isfinite(v):
        return repr(float(v))
    if math.isnan(v):
        return "_NAN"
    return "_INF" if v > 0 else "(-_INF)"


_NAMESPACE = {"_exp": math.exp, "_log": math.log, "_INF": math.inf, "_NAN": math.nan, "_NoGuard": _NoGuard}


# -------------------------------------------------------------- expressions


def inline(e, env) -> str:
    """Single Python expression computing e; env maps variable index -> name."""
    t = type(e)
    if t is Const:
        return _num(e.value)
    if t is Var:
        return env[e.index]
    if t is Affine:
        if not e.coeffs:
            return _num(e.offset)
        acc = f"{_num(e.coeffs[0])} * {env[0]}"
        for i in range(1, len(e.coeffs)):
            acc = f"({acc} + {_num(e.coeffs[i])} * {env[i]})"
        return f"({acc} + {_num(e.offset)})"
    if t is Add:
        return f"({inline(e.left, env)} + {inline(e.right, env)})"
    if t is Sub:
        return f"({inline(e.left, env)} - {inline(e.right, env)})"
    if t is Mul:
        return f"({inline(e.left, env)} * {inline(e.right, env)})"
    if t is Div:
        return f"({inline(e.left, env)} / {inline(e.right, env)})"
    if t is Exp:
        return f"_exp({inline(e.arg, env)})"
    if t is Log:
        return f"_log({inline(e.arg, env)})"
    raise TypeError(f"not an expression node: {e!r}")


_CMP = {"<": "<", "<=": "<=", "==": "==", ">=": ">=", ">": ">"}


def inline_pred(pred, env) -> str:
    if isinstance(pred, Atom):
        return f"({inline(pred.expr, env)} {_CMP[pred.op]} 0.0)"
    if isinstance(pred, And):
        if not pred.terms:
            return "True"
        return "(" + " and ".join(inline_pred(t, env) for t in pred.terms) + ")"
    if isinstance(pred, Or):
        if not pred.terms:
            return "False"
        return "(" + " or ".join(inline_pred(t, env) for t in pred.terms) + ")"
    raise TypeError(f"not a predicate: {pred!r}")


class _Writer:
    def __init__(self):
        self.lines = []
        self.counter = 0

    def fresh(self, stem="t"):
        self.counter += 1
        return f"{stem}{self.counter}"

    def emit(self, indent, line):
        self.lines.append("    " * indent + line)

    def source(self):
        return "\n".join(self.lines) + "\n"


def _emit_value_tangent(w, indent, e, env, arity, memo, want_tangent=True):
    """Emit statements for value (and tangent) of e.

    Returns (value code, tangents) where tangents[k] is a code string or None
    for an exact zero.
    """
    key = id(e)
    if key in memo:
        return memo[key]
    t = type(e)
    zero = [None] * arity
    if t is Const:
        out = (_num(e.value), zero)
    elif t is Var:
        tan = list(zero)
        tan[e.index] = "1.0"
        out = (env[e.index], tan)
    elif t is Affine:
        name = w.fresh("v")
        w.emit(indent, f"{name} = {inline(e, env)}")
        tan = list(zero)
        for k, c in enumerate(e.coeffs):
            tan[k] = _num(c)
        out = (name, tan)
    elif t in (Exp, Log):
        u, du = _emit_value_tangent(w, indent, e.arg, env, arity, memo, want_tangent)
        name = w.fresh("v")
        tan = list(zero)
        if t is Exp:
            w.emit(indent, f"{name} = _exp({u})")
            if want_tangent:
                for k in range(arity):
                    if du[k] is not None:
                        tan[k] = _store(w, indent, f"{name} * {du[k]}")
        else:
            w.emit(indent, f"{name} = _log({u})")
            if want_tangent:
                for k in range(arity):
                    if du[k] is not None:
                        tan[k] = _store(w, indent, f"{du[k]} / {u}")
        out = (name, tan)
    else:
        u, du = _emit_value_tangent(w, indent, e.left, env, arity, memo, want_tangent)
        v, dv = _emit_value_tangent(w, indent, e.right, env, arity, memo, want_tangent)
        name = w.fresh("v")
        tan = list(zero)
        if t is Add:
            w.emit(indent, f"{name} = {u} + {v}")
        elif t is Sub:
            w.emit(indent, f"{name} = {u} - {v}")
        elif t is Mul:
            w.emit(indent, f"{name} = {u} * {v}")
        else:
            w.emit(indent, f"{name} = {u} / {v}")
        if want_tangent:
            for k in range(arity):
                a, b = du[k], dv[k]
                if a is None and b is None:
                    continue
                if t is Add:
                    code = a if b is None else (b if a is None else f"{a} + {b}")
                elif t is Sub:
                    code = a if b is None else (f"0.0 - {b}" if a is None else f"{a} - {b}")
                elif t is Mul:
                    left = None if a is None else f"{a} * {v}"
                    right = None if b is None else f"{u} * {b}"
                    code = left if right is None else (right if left is None else f"{left} + {right}")
                else:
                    if b is None:
                        code = f"{a} / {v}"
                    elif a is None:
                        code = f"(0.0 - {name} * {b}) / {v}"
                    else:
                        code = f"({a} - {name} * {b}) / {v}"
                tan[k] = _store(w, indent, code)
        out = (name, tan)
    memo[key] = out
    return out


def _store(w, indent, code):
    name = w.fresh("w")
    w.emit(indent, f"{name} = {code}")
    return name


# ------------------------------------------------------------------ programs


def _emit_node(w, indent, P, i, want_tangent):
    """Emit the guarded evaluation of node i.

    Defines x{i}, b{i} and, with tangents, d{i}_{pos} for every predecessor slot.
    """
    F = P.func(i)
    ids = P.preds(i)
    env = [f"x{j}" for j in ids]
    arity = len(ids)
    for b, (guard, branch) in enumerate(zip(F.guards, F.branches), start=1):
        cond = inline_pred(guard, env)
        head = "if" if b == 1 else "elif"
        always = cond == "True"
        if always and b == 1:
            inner = indent
        else:
            w.emit(indent, f"{head} {cond}:" if not always else "else:")
            inner = indent + 1
        w.emit(inner, f"b{i} = {b}")
        val, tan = _emit_value_tangent(w, inner, branch, env, arity, {}, want_tangent)
        w.emit(inner, f"x{i} = {val}")
        if want_tangent:
            for pos in range(arity):
                w.emit(inner, f"d{i}_{pos} = {tan[pos] if tan[pos] is not None else '0.0'}")
        if always:
            return
    w.emit(indent, "else:")
    w.emit(indent + 1, "raise _NoGuard()")


def _ancestors(P, out):
    need = {out}
    for t in range(out, P.p, -1):
        if t in need:
            need.update(P.preds(t))
    return need


def _emit_backward(w, indent, P, out, prefix):
    """Adjoint sweep for one output; returns names holding d out / d x_k."""
    need = _ancestors(P, out)
    touched = set()
    names = {j: f"{prefix}{j}" for j in range(1, P.m + 1)}
    w.emit(indent, f"{names[out]} = 1.0")
    touched.add(out)
    for t in range(out, P.p, -1):
        if t not in need or t not in touched:
            continue
        for pos, j in enumerate(P.preds(t)):
            term = f"{names[t]} * d{t}_{pos}"
            if j in touched:
                w.emit(indent, f"{names[j]} = {names[j]} + {term}")
            else:
                w.emit(indent, f"{names[j]} = {term}")
                touched.add(j)
    return [names[k] if k in touched else "0.0" for k in range(1, P.p + 1)]


def _forward_body(w, indent, P, want_tangent):
    for i in range(P.p + 1, P.m + 1):
        _emit_node(w, indent, P, i, want_tangent)


def program_source(P) -> str:
    w = _Writer()
    args = ", ".join(f"x{k}" for k in range(1, P.p + 1))
    outs = [f"x{o}" for o in P.outputs]

    w.emit(0, f"def value({args}):")
    _forward_body(w, 1, P, False)
    w.emit(1, f"return ({', '.join(outs)},)")
    w.emit(0, "")
    w.emit(0, f"def index({args}):")
    _forward_body(w, 1, P, False)
    w.emit(1, "return (" + ", ".join(f"b{i}" for i in range(P.p + 1, P.m + 1)) + ",)")
    w.emit(0, "")
    w.emit(0, f"def value_and_jacobian({args}):")
    _forward_body(w, 1, P, True)
    rows = []
    for n, o in enumerate(P.outputs):
        rows.append("(" + ", ".join(_emit_backward(w, 1, P, o, f"a{n}_")) + ",)")
    w.emit(1, f"return ({', '.join(outs)},), ({', '.join(rows)},)")
    return w.source()


class CompiledProgram:
    """Fast-path callables; results equal the interpreter's bit for bit."""

    def __init__(self, P, source, ns):
        self.program = P
        self.source = source
        self._value = ns["value"]
        self._index = ns["index"]
        self._vj = ns["value_and_jacobian"]

    def _rediagnose(self, x):
        from .program import evaluate

        evaluate(self.program, x)
        raise RuntimeError("generated code failed where the interpreter succeeded")  # pragma: no cover

    def value(self, x):
        try:
            return self._value(*x)
        except (ArithmeticError, ValueError, _NoGuard):
            self._rediagnose(x)

    def index(self, x):
        try:
            return self._index(*x)
        except (ArithmeticError, ValueError, _NoGuard):
            self._rediagnose(x)

    def value_and_jacobian(self, x):
        try:
            return self._vj(*x)
        except (ArithmeticError, ValueError, _NoGuard):
            self._rediagnose(x)

    def value_and_grad(self, x):
        y, jac = self.value_and_jacobian(x)
        return y[0], jac[0]


def compile_program(P) -> CompiledProgram:
    src = program_source(P)
    ns = dict(_NAMESPACE)
    exec(compile(src, f"<program {P.name or id(P)}>", "exec"), ns)
    return CompiledProgram(P, src, ns)


# ------------------------------------------------------------- SGD kernel


def compile_sgd_kernel(programs, p):
    src = _prefixed_kernel_source(programs, p)
    ns = dict(_NAMESPACE)
    exec(compile(src, "<sgd kernel>", "exec"), ns)
    return ns["run"], src


def _prefixed_kernel_source(programs, p):
    """Source of ``run(x, gammas, masks, counts, k0, k1, r2, tail, accumulate)``.

    Step k uses the minibatch whose bit c in ``masks[k]`` selects component c.
    Component gradients are summed in ascending order, divided by the batch
    size ``counts[k]``, and x <- x - gamma_k * mean.  Component c's nodes are renamed with
    a ``c{c}`` prefix; its input nodes 1..p are the shared iterate.
    With ``accumulate`` set, each new iterate is added to ``tail``.
    Returns (status, k, x, tail_sums) with status 0 done, 1 left the radius,
    2 fault at step k (x is the iterate before that step).
    """
    parts = [(c, P) for c, P in enumerate(programs)]
    w = _Writer()
    xs = [f"x{k}" for k in range(1, p + 1)]
    us = [f"u{k}" for k in range(1, p + 1)]
    tup = lambda names: "(" + ", ".join(names) + ",)"
    w.emit(0, "def run(x, gammas, masks, counts, k0, k1, r2, tail, accumulate):")
    w.emit(1, f"{', '.join(xs)}, = x")
    w.emit(1, f"{', '.join(us)}, = tail")
    w.emit(1, "k = k0")
    w.emit(1, "try:")
    w.emit(2, "for k in range(k0, k1):")
    w.emit(3, "m = masks[k]")
    for k in range(1, p + 1):
        w.emit(3, f"s{k} = 0.0")
    for c, P in parts:
        w.emit(3, f"if m & {1 << c}:")
        sub = _Writer()
        sub.counter = w.counter
        _forward_body(sub, 4, P, True)
        grads = _emit_backward(sub, 4, P, P.m, "a_")
        w.counter = sub.counter
        for line in sub.lines:
            w.lines.append(_prefix_nodes(line, P.p, f"c{c}"))
        for k in range(1, p + 1):
            g = _prefix_nodes(grads[k - 1], P.p, f"c{c}")
            w.emit(4, f"s{k} = s{k} + {g}")
    w.emit(3, "n = counts[k]")
    w.emit(3, "g = gammas[k]")
    for k in range(1, p + 1):
        w.emit(3, f"x{k} = x{k} - g * (s{k} / n)")
    w.emit(3, "if accumulate:")
    for k in range(1, p + 1):
        w.emit(4, f"u{k} = u{k} + x{k}")
    norm = " + ".join(f"x{k} * x{k}" for k in range(1, p + 1))
    w.emit(3, f"if {norm} > r2:")
    w.emit(4, f"return 1, k, {tup(xs)}, {tup(us)}")
    w.emit(1, "except (ArithmeticError, ValueError, _NoGuard):")
    w.emit(2, f"return 2, k, {tup(xs)}, {tup(us)}")
    w.emit(1, f"return 0, k1, {tup(xs)}, {tup(us)}")
    return w.source()


def _prefix_nodes(line, p, tag):
    """Rename per-component names; inputs x1..xp stay shared."""

    def repl(mo):
        stem, num = mo.group(1), int(mo.group(2))
        if stem == "x" and num <= p:
            return mo.group(0)
        return f"{tag}{stem}{num}"

    return re.sub(r"\b(x|b|d|a_|v|w)(\d+)", repl, line)
