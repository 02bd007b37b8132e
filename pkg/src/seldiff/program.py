"""Straight-line programs over selection functions.

Nodes 1..p are inputs.  Node i > p applies a selection function ``g_i`` to the
values of its predecessors ``pr(i)``, all of which have smaller ids.  The last
q nodes are the outputs.  Nothing is overwritten: a trace keeps every node
value, the local selection gradient of every node and the branch it took.
"""

from __future__ import annotations

import graphlib
import json
from dataclasses import dataclass

import numpy as np

from . import expr as ex
from . import selection as sel
from .expr import DomainFault
from .selection import SelectionFunction

SCHEMA_VERSION = 1


class InvalidProgram(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class EvalTrace:
    """Values x_1..x_m, local gradients d_i and branch ids of one evaluation.

    Lists are indexed by node id minus one; input nodes carry ``None`` as local
    gradient and 0 as branch id.
    """

    values: tuple
    local_grads: tuple
    branches: tuple

    @property
    def m(self):
        return len(self.values)


class Program:
    """P = (p, q, m, pr, G).

    ``pr`` and ``g`` list the predecessor ids (1-based) and the selection
    function of the non-input nodes p+1..m, in node order.
    """

    def __init__(self, p: int, q: int, pr, g, name=None):
        self.p = int(p)
        self.q = int(q)
        self.pr = tuple(tuple(int(j) for j in ids) for ids in pr)
        self.g = tuple(g)
        self.name = name
        self._valid = None
        self._compiled = None

    @property
    def m(self) -> int:
        return self.p + len(self.g)

    @property
    def outputs(self) -> range:
        return range(self.m - self.q + 1, self.m + 1)

    def preds(self, i: int) -> tuple:
        """pr(i) for 1 <= i <= m; inputs have no predecessors."""
        return () if i <= self.p else self.pr[i - self.p - 1]

    def func(self, i: int) -> SelectionFunction:
        return self.g[i - self.p - 1]

    def check(self):
        if self._valid is None:
            self._valid = validate(self)
        if self._valid:
            raise InvalidProgram(self._valid)

    @property
    def compiled(self):
        # generated straight-line code, built on first use
        if self._compiled is None:
            from .compiled import compile_program

            self.check()
            self._compiled = compile_program(self)
        return self._compiled

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_compiled"] = None
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<Program{label} p={self.p} q={self.q} m={self.m}>"


def validate(P: Program) -> list:
    """List of violated invariants; empty when the program is well formed."""
    out = []
    if P.p < 1:
        out.append("input dimension p must be >= 1")
    if P.q < 1:
        out.append("output dimension q must be >= 1")
    if len(P.pr) != len(P.g):
        out.append(f"{len(P.pr)} predecessor lists for {len(P.g)} node functions")
        return out
    if P.m < P.p + P.q:
        out.append(f"m = {P.m} < p + q = {P.p + P.q}")
    graph = {}
    for i in range(P.p + 1, P.m + 1):
        ids = P.preds(i)
        graph[i] = set(ids)
        if not ids:
            out.append(f"empty predecessors at node {i}")
        for j in ids:
            if j < 1 or j > P.m:
                out.append(f"predecessor {j} out of range at node {i}")
            elif not j < i:
                out.append(f"j < i broken at node {i}")
                break
        F = P.func(i)
        if not isinstance(F, SelectionFunction):
            out.append(f"node {i} function is not a selection function")
        elif F.arity != len(ids):
            out.append(f"arity mismatch at node {i}: function takes {F.arity}, pr has {len(ids)}")
    try:
        tuple(graphlib.TopologicalSorter(graph).static_order())
    except graphlib.CycleError as err:
        out.append(f"cycle through nodes {err.args[1]}")
    return out


# ------------------------------------------------------------------ evaluate


def evaluate(P: Program, x, force=None):
    """Forward sweep in node order.

    ``force`` optionally maps node id -> branch id; a forced node evaluates
    that branch without consulting its guards.  Returns (y, trace).
    """
    P.check()
    pt = ex._as_point(x)
    if len(pt) != P.p:
        raise ValueError(f"program takes {P.p} inputs, got {len(pt)}")
    values = list(pt)
    grads = [None] * P.p
    branches = [0] * P.p
    for i in range(P.p + 1, P.m + 1):
        F = P.func(i)
        local = tuple(values[j - 1] for j in P.preds(i))
        try:
            memo = {}
            if force is not None and i in force:
                b = force[i]
            else:
                b = F._index(local, memo)
            v, d = ex._value_and_tangent(F.branches[b - 1], local, len(local), {})
        except ex._Fault as f:
            raise F._fault(f, local).at_program_node(i, pt) from None
        except DomainFault as f:
            raise f.at_program_node(i, pt) from None
        except sel.TotalityError:
            raise sel.TotalityError(pt) from None
        values.append(v)
        grads.append(d)
        branches.append(b)
    trace = EvalTrace(tuple(values), tuple(grads), tuple(branches))
    y = np.array(values[P.m - P.q:], dtype=float)
    return y, trace


def function_of(P: Program):
    """Input-output map of P; returns a float for scalar programs."""

    def f(x):
        y, _ = evaluate(P, x)
        return float(y[0]) if P.q == 1 else y

    return f


def to_selection(P: Program, output=None, cap=sel.DEFAULT_BRANCH_CAP) -> SelectionFunction:
    """Compose the node functions into one selection function over R^p."""
    P.check()
    nodes = [sel.identity(P.p, k) for k in range(P.p)]
    for i in range(P.p + 1, P.m + 1):
        nodes.append(sel.compose(P.func(i), [nodes[j - 1] for j in P.preds(i)], cap))
    return nodes[(output or P.m) - 1]


# ------------------------------------------------------------------ builder


class ProgramBuilder:
    """Append nodes one at a time; node ids are returned as ints."""

    def __init__(self, p: int, name=None):
        self.p = p
        self.pr = []
        self.g = []
        self.name = name

    @property
    def inputs(self):
        return list(range(1, self.p + 1))

    def apply(self, F: SelectionFunction, ids) -> int:
        ids = tuple(ids)
        if F.arity != len(ids):
            raise ValueError(f"function takes {F.arity} arguments, got {len(ids)}")
        self.pr.append(ids)
        self.g.append(F)
        return self.p + len(self.g)

    def smooth(self, e, ids) -> int:
        return self.apply(sel.smooth(e, len(ids)), ids)

    def build(self, outputs) -> Program:
        outputs = list(outputs)
        m = self.p + len(self.g)
        pr, g = list(self.pr), list(self.g)
        if outputs != list(range(m - len(outputs) + 1, m + 1)):
            # copy outputs to the tail so they are the last q nodes
            for o in outputs:
                pr.append((o,))
                g.append(sel.identity(1))
        P = Program(self.p, len(outputs), pr, g, self.name)
        P.check()
        return P


def from_selection(F: SelectionFunction, name=None) -> Program:
    """Single-node program computing F."""
    return Program(F.arity, 1, [tuple(range(1, F.arity + 1))], [F], name or F.name)


def chain(*Fs, name=None) -> Program:
    """Scalar program applying unary functions in sequence."""
    b = ProgramBuilder(1, name)
    node = 1
    for F in Fs:
        node = b.apply(F, [node])
    return b.build([node])


# ------------------------------------------------------------------ JSON


def to_json(P: Program) -> dict:
    nodes = [
        {"id": i, "pr": list(P.preds(i)), "g": sel.to_text(P.func(i))}
        for i in range(P.p + 1, P.m + 1)
    ]
    return {"schema_version": SCHEMA_VERSION, "name": P.name, "p": P.p, "q": P.q, "m": P.m, "nodes": nodes}


def from_json(doc) -> Program:
    if isinstance(doc, str):
        doc = json.loads(doc)
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {version!r}")
    nodes = sorted(doc["nodes"], key=lambda n: n["id"])
    P = Program(doc["p"], doc["q"], [n["pr"] for n in nodes], [sel.from_text(n["g"]) for n in nodes], doc.get("name"))
    if "m" in doc and doc["m"] != P.m:
        raise ValueError(f"document declares m = {doc['m']} but lists {P.m} nodes")
    return P


def dumps(P: Program) -> str:
    return json.dumps(to_json(P), indent=1)


def loads(text: str) -> Program:
    return from_json(json.loads(text))


# ------------------------------------------------------------------ views


class ScalarView:
    """Uniform value / selection gradient / index access for a scalar target.

    Programs go through their generated code, selection functions through the
    expression evaluator.
    """

    def __init__(self, target):
        self.target = target
        if isinstance(target, Program):
            if target.q != 1:
                raise ValueError("expected a scalar program")
            self.arity = target.p
            self._c = target.compiled
        elif isinstance(target, SelectionFunction):
            self.arity = target.arity
            self._c = None
        else:
            raise TypeError(f"expected a Program or SelectionFunction, got {type(target).__name__}")

    def value(self, x) -> float:
        if self._c is None:
            return self.target.value(x)
        return self._c.value(tuple(float(v) for v in x))[0]

    def grad(self, x) -> np.ndarray:
        if self._c is None:
            return self.target.gradient(x)
        return np.array(self._c.value_and_grad(tuple(float(v) for v in x))[1])

    def value_and_grad(self, x):
        if self._c is None:
            v, i = self.target.value_index(x)
            return v, ex.grad_expr(self.target.branches[i - 1], x)
        v, g = self._c.value_and_grad(tuple(float(v) for v in x))
        return v, np.array(g)

    def index(self, x):
        if self._c is None:
            return self.target.index(x)
        return self._c.index(tuple(float(v) for v in x))


def scalar_view(target) -> ScalarView:
    return target if isinstance(target, ScalarView) else ScalarView(target)
