"""Lower a parsed module to a Program by inlining every call.

While lowering, a value is an elementary expression whose ``Var(k)`` reads
program node ``k + 1``.  Arithmetic, ``exp``, ``log`` and ``affine`` only grow
that expression; nonsmooth intrinsics and ``select`` emit a node whose
selection function absorbs the smooth subexpressions it consumes.
"""

from __future__ import annotations

import hashlib
import operator
from dataclasses import dataclass, field

from .. import expr as ex
from .. import selection as sel
from ..expr import Add, Const, Div, DomainFault, Exp, Log, Mul, Sub, Var
from ..program import Program
from .parser import parse_with_diagnostics
from .syntax import (
    AffineCall,
    BinOp,
    BoolOp,
    Call,
    Compare,
    Diagnostic,
    DslError,
    Module,
    Name,
    Neg,
    Num,
    Select,
    Span,
    TrueGuard,
)

INTRINSICS = {"exp": 1, "log": 1, "relu": 1, "abs": 1, "max": 2, "min": 2}
_NONSMOOTH = {"relu": sel.relu, "abs": sel.abs_, "max": sel.max2, "min": sel.min2}
_NEGATED = {"<": ">=", "<=": ">", ">": "<=", ">=": "<"}
_FOLD = {"+": operator.add, "-": operator.sub, "*": operator.mul, "/": operator.truediv}
_MIRRORED = {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "==": "=="}


@dataclass(frozen=True)
class Symbol:
    span: Span
    label: str


@dataclass
class CompileArtifact:
    program: Program
    symbols: dict  # node id -> Symbol
    source_hash: str
    entry: str
    module: Module = field(repr=False, default=None)


def source_hash(src: str) -> str:
    return hashlib.sha256(src.encode("utf-8")).hexdigest()


# ---------------------------------------------------------- static checks


def _walk_expr(e):
    yield e
    if isinstance(e, Neg):
        yield from _walk_expr(e.operand)
    elif isinstance(e, BinOp):
        yield from _walk_expr(e.left)
        yield from _walk_expr(e.right)
    elif isinstance(e, (Call, AffineCall)):
        for a in e.args:
            yield from _walk_expr(a)
    elif isinstance(e, Select):
        for arm in e.arms:
            if arm.guard is not None:
                yield from _walk_guard(arm.guard)
            yield from _walk_expr(arm.body)


def _walk_guard(g):
    if isinstance(g, Compare):
        yield from _walk_expr(g.left)
        yield from _walk_expr(g.right)
    elif isinstance(g, BoolOp):
        for t in g.terms:
            yield from _walk_guard(t)


def _complementary(a, b):
    if not (isinstance(a, Compare) and isinstance(b, Compare)) or a.op not in _NEGATED:
        return False
    want = _NEGATED[a.op]
    if b.op == want and b.left == a.left and b.right == a.right:
        return True
    return b.op == _MIRRORED[want] and b.left == a.right and b.right == a.left


def guards_total(s: Select) -> bool:
    """Syntactic totality: an else arm, a ``true`` guard or a complementary pair."""
    guards = [arm.guard for arm in s.arms]
    if any(g is None or isinstance(g, TrueGuard) for g in guards):
        return True
    return any(_complementary(a, b) for i, a in enumerate(guards) for b in guards[i + 1 :])


def check_module(module: Module) -> list:
    diags = []
    fns = {}
    for f in module.functions:
        if f.name in fns:
            diags.append(Diagnostic(f.span, f"function {f.name!r} is defined twice"))
            continue
        fns[f.name] = f
    calls = {name: [] for name in fns}
    for f in module.functions:
        if fns.get(f.name) is not f:
            continue
        scope = set()
        for prm in f.params:
            if prm in scope:
                diags.append(Diagnostic(f.span, f"duplicate parameter {prm!r} in function {f.name!r}"))
            scope.add(prm)
        bodies = [(let.value, let) for let in f.lets] + [(f.body, None)]
        for value, let in bodies:
            for node in _walk_expr(value):
                _check_node(node, scope, fns, diags, calls[f.name])
            if let is not None:
                if let.name in scope:
                    diags.append(Diagnostic(let.span, f"{let.name!r} is already bound"))
                scope.add(let.name)
    diags.extend(_recursion(fns, calls))
    return diags


def _check_node(node, scope, fns, diags, calls):
    if isinstance(node, Name) and node.id not in scope:
        diags.append(Diagnostic(node.span, f"undefined symbol {node.id!r}"))
    elif isinstance(node, Call):
        if node.name in fns:
            calls.append(node)
            want = len(fns[node.name].params)
        elif node.name in INTRINSICS:
            want = INTRINSICS[node.name]
        else:
            diags.append(Diagnostic(node.span, f"undefined function {node.name!r}"))
            return
        if len(node.args) != want:
            diags.append(Diagnostic(node.span, f"arity mismatch: {node.name!r} takes {want} argument(s), got {len(node.args)}"))
    elif isinstance(node, AffineCall):
        if len(node.coeffs) != len(node.args) or not node.args:
            diags.append(
                Diagnostic(node.span, f"arity mismatch: affine has {len(node.coeffs)} coefficient(s) and {len(node.args)} argument(s)")
            )
    elif isinstance(node, Select):
        for arm in node.arms[:-1]:
            if arm.guard is None:
                diags.append(Diagnostic(arm.span, "else must be the last arm"))
        if not guards_total(node):
            diags.append(Diagnostic(node.span, "guards not total: add an else arm"))


def _recursion(fns, calls):
    diags = []
    state = {}

    def visit(name, path):
        state[name] = "open"
        for call in calls.get(name, ()):
            if state.get(call.name) == "open":
                cycle = path[path.index(call.name) :] + [call.name]
                diags.append(Diagnostic(call.span, f"recursion detected: {' -> '.join(cycle)}"))
            elif call.name not in state:
                visit(call.name, path + [call.name])
        state[name] = "done"

    for name in fns:
        if name not in state:
            visit(name, [name])
    return diags


# ---------------------------------------------------------- lowering


class _Fail(Exception):
    def __init__(self, diagnostic):
        self.diagnostic = diagnostic


def _const(e):
    return e.value if isinstance(e, Const) else None


def _binary(op, a, b, span):
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None:
        if op == "/" and cb == 0.0:
            raise _Fail(Diagnostic(span, "division by zero in constant expression"))
        return Const(_FOLD[op](ca, cb))
    return {"+": Add, "-": Sub, "*": Mul, "/": Div}[op](a, b)


class _Lowering:
    def __init__(self, module: Module, entry: str):
        self.fns = {f.name: f for f in module.functions}
        self.entry = self.fns[entry]
        self.p = len(self.entry.params)
        self.pr = []
        self.g = []
        self.symbols = {}

    def node_count(self):
        return self.p + len(self.g)

    def run(self):
        env = {name: Var(k) for k, name in enumerate(self.entry.params)}
        for k, name in enumerate(self.entry.params):
            self.symbols[k + 1] = Symbol(self.entry.span, f"input {name}")
        out = self.function_body(self.entry, env)
        last = self.node_count()
        if not (isinstance(out, Var) and out.index + 1 == last and last > self.p):
            out = self.emit(lambda es, k: sel.smooth(es[0], k), [out], self.entry.body.span, "output", force=True)
        return self.prune(out.index + 1)

    def function_body(self, f, env):
        env = dict(env)
        for let in f.lets:
            env[let.name] = self.lower(let.value, env)
        return self.lower(f.body, env)

    # a node reads the variables its parts mention, renumbered in node order
    def emit(self, build, parts, span, label, force=False):
        used = sorted(set().union(*(ex.variables(e) for e in parts)))
        if not used and force:
            used = [0]
        local = {j: k for k, j in enumerate(used)}
        F = build([ex.remap(e, local) for e in parts], max(len(used), 1))
        if not used:
            try:
                return Const(F.value((0.0,)))
            except (DomainFault, sel.TotalityError) as err:
                raise _Fail(Diagnostic(span, f"constant expression is undefined ({err.kind})")) from None
        self.pr.append(tuple(j + 1 for j in used))
        self.g.append(F)
        node = self.node_count()
        self.symbols[node] = Symbol(span, label)
        return Var(node - 1)

    def lower(self, e, env):
        if isinstance(e, Num):
            return Const(e.value)
        if isinstance(e, Name):
            return env[e.id]
        if isinstance(e, Neg):
            v = self.lower(e.operand, env)
            c = _const(v)
            return Const(-c) if c is not None else -v
        if isinstance(e, BinOp):
            return _binary(e.op, self.lower(e.left, env), self.lower(e.right, env), e.span)
        if isinstance(e, AffineCall):
            acc = None
            for c, a in zip(e.coeffs, e.args):
                term = _binary("*", Const(c), self.lower(a, env), e.span)
                acc = term if acc is None else _binary("+", acc, term, e.span)
            return _binary("+", acc, Const(e.offset), e.span)
        if isinstance(e, Call):
            args = [self.lower(a, env) for a in e.args]
            if e.name in self.fns:
                f = self.fns[e.name]
                return self.function_body(f, dict(zip(f.params, args)))
            if e.name in ("exp", "log"):
                return self.smooth_intrinsic(e, args[0])
            outer = _NONSMOOTH[e.name]()
            return self.emit(lambda es, k: sel.compose(outer, [sel.smooth(x, k) for x in es]), args, e.span, e.name)
        if isinstance(e, Select):
            return self.select(e, env)
        raise TypeError(f"unexpected node {e!r}")

    def smooth_intrinsic(self, call, arg):
        c = _const(arg)
        if c is None:
            return Exp(arg) if call.name == "exp" else Log(arg)
        try:
            return Const(ex.eval_expr(Exp(arg) if call.name == "exp" else Log(arg), ()))
        except (DomainFault, OverflowError) as err:
            raise _Fail(Diagnostic(call.span, f"constant expression is undefined ({err.kind})")) from None

    def select(self, s, env):
        parts = []
        shapes = []
        for arm in s.arms:
            shapes.append(None if arm.guard is None else self.guard_shape(arm.guard, env, parts))
            parts.append(self.lower(arm.body, env))

        def build(es, k):
            it = iter(es)
            guards, branches = [], []
            for shape in shapes:
                guards.append(sel.TRUE if shape is None else _realize(shape, it))
                branches.append(next(it))
            return sel.SelectionFunction(k, guards, branches, "select")

        return self.emit(build, parts, s.span, "select")

    def guard_shape(self, g, env, parts):
        """Lower the guard's expressions into ``parts``; return its shape."""
        if isinstance(g, TrueGuard):
            return ("true",)
        if isinstance(g, Compare):
            left, right = self.lower(g.left, env), self.lower(g.right, env)
            parts.append(left if right == Const(0.0) else Sub(left, right))
            return ("atom", g.op)
        return (g.op, [self.guard_shape(t, env, parts) for t in g.terms])

    def prune(self, out):
        """Drop nodes the output does not read and renumber the rest."""
        p = self.p
        live = {out}
        for i in range(out, p, -1):
            if i in live:
                live.update(self.pr[i - p - 1])
        keep = [i for i in range(p + 1, out + 1) if i in live]
        new_id = {i: i for i in range(1, p + 1)}
        new_id.update({i: p + 1 + k for k, i in enumerate(keep)})
        pr = [tuple(new_id[j] for j in self.pr[i - p - 1]) for i in keep]
        g = [self.g[i - p - 1] for i in keep]
        symbols = {new_id[i]: s for i, s in self.symbols.items() if i in new_id}
        return Program(p, 1, pr, g, self.entry.name), symbols


def _realize(shape, it):
    kind = shape[0]
    if kind == "true":
        return sel.TRUE
    if kind == "atom":
        return sel.Atom(next(it), shape[1])
    terms = [_realize(t, it) for t in shape[1]]
    return sel.conj(*terms) if kind == "and" else sel.disj(*terms)


def compile_module(module: Module, entry: str | None = None, src: str = "") -> CompileArtifact:
    diags = check_module(module)
    if diags:
        raise DslError(sorted(diags, key=lambda d: (d.span.line, d.span.col)))
    if not module.functions:
        raise DslError([Diagnostic(Span(1, 1), "no functions defined")])
    entry = module.functions[-1].name if entry is None else entry
    if entry not in module.names:
        raise DslError([Diagnostic(Span(1, 1), f"undefined function {entry!r}")])
    f = module.function(entry)
    if not f.params:
        raise DslError([Diagnostic(f.span, f"function {entry!r} needs at least one parameter to be compiled")])
    lowering = _Lowering(module, entry)
    try:
        program, symbols = lowering.run()
    except _Fail as err:
        raise DslError([err.diagnostic]) from None
    program.check()
    return CompileArtifact(program, symbols, source_hash(src), entry, module)


def compile_source(src: str, entry: str | None = None) -> CompileArtifact:
    module, diags = parse_with_diagnostics(src)
    if diags:
        raise DslError(diags)
    return compile_module(module, entry, src)


def load(path, entry: str | None = None) -> CompileArtifact:
    with open(path, encoding="utf-8") as fh:
        return compile_source(fh.read(), entry)
