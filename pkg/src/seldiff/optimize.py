"""Minibatch SGD on finite sums driven by backward AD.

Every step draws a nonempty subset I of the components uniformly, averages
their backward-AD gradients and moves by -gamma_k times that average.  The
inner loop runs in generated code; ``backend="interpreter"`` runs the same
arithmetic through ``evaluate`` / ``backward_ad`` and gives identical iterates.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import selection as sel
from .autodiff import backward_ad
from .compiled import compile_sgd_kernel
from .expr import Affine, DomainFault
from .program import Program, evaluate
from .setfield import ARTIFICIAL_CRITICAL, classify

MASK_CHUNK = 65_536


@dataclass
class FiniteSumProblem:
    """J = (1/n) * sum_i f_i over scalar programs sharing their input dimension."""

    components: list
    name: str = ""

    def __post_init__(self):
        self.components = list(self.components)
        if not self.components:
            raise ValueError("a finite sum needs at least one component")
        p = self.components[0].p
        for P in self.components:
            P.check()
            if P.q != 1 or P.p != p:
                raise ValueError("components must be scalar programs with a common input dimension")
        if self.n > 62:
            raise ValueError("at most 62 components are supported")
        self._objective = None
        self._kernel = None

    @property
    def n(self):
        return len(self.components)

    @property
    def p(self):
        return self.components[0].p

    def objective_program(self) -> Program:
        """One program for J: the components side by side, then their mean."""
        if self._objective is None:
            p = self.p
            pr, g, outs = [], [], []
            offset = 0
            for P in self.components:
                for ids, F in zip(P.pr, P.g):
                    pr.append(tuple(j if j <= p else j + offset for j in ids))
                    g.append(F)
                outs.append(P.m + offset)
                offset += P.m - p
            w = 1.0 / self.n
            pr.append(tuple(outs))
            g.append(sel.smooth(Affine((w,) * self.n, 0.0), self.n))
            self._objective = Program(p, 1, pr, g, f"mean({self.name})" if self.name else "J")
        return self._objective

    def value(self, x) -> float:
        return float(self.objective_program().compiled.value(tuple(float(v) for v in x))[0])

    def kernel(self):
        if self._kernel is None:
            self._kernel = compile_sgd_kernel(self.components, self.p)[0]
        return self._kernel

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_kernel"] = None
        return state


@dataclass
class StepSchedule:
    """gamma_k = c * alpha_k, with alpha_k = (k+2)^-beta or 1/((k+2) log(k+2))."""

    c: float = 1.0
    kind: str = "power"
    beta: float = 0.6

    def __post_init__(self):
        if not 0.0 < self.c <= 1.0:
            raise ValueError("c must lie in (0, 1]")
        if self.kind == "power":
            if not 0.5 < self.beta <= 1.0:
                raise ValueError("power schedules need 0.5 < beta <= 1")
        elif self.kind != "log-damped":
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    def alpha(self, k: int) -> float:
        if self.kind == "power":
            return (k + 2.0) ** (-self.beta)
        return 1.0 / ((k + 2.0) * math.log(k + 2.0))

    def gamma(self, k: int) -> float:
        return self.c * self.alpha(k)

    def gammas(self, n: int) -> list:
        return [self.c * self.alpha(k) for k in range(n)]


def run_rng(seed, run_id=0) -> np.random.Generator:
    """Counter-based stream keyed by (seed, run_id)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(run_id)])))


def draw_masks(rng, n_components, count) -> list:
    """Uniform nonempty subsets as bit masks: n fair bits, all-zero rejected.

    Draws in fixed chunks, so a shorter run sees a prefix of a longer one.
    """
    out = []
    top = 1 << n_components
    while len(out) < count:
        chunk = rng.integers(0, top, MASK_CHUNK, dtype=np.int64)
        out.extend(int(v) for v in chunk[chunk != 0])
    return out[:count]


def mask_members(mask: int, n: int) -> list:
    return [i + 1 for i in range(n) if mask >> i & 1]


def minibatch_gradient(problem: FiniteSumProblem, I, x) -> np.ndarray:
    """(1/|I|) * sum of backward-AD gradients over components in I (1-based)."""
    I = sorted(set(I))
    if not I or I[0] < 1 or I[-1] > problem.n:
        raise ValueError(f"batch must be a nonempty subset of 1..{problem.n}")
    s = np.zeros(problem.p)
    for i in I:
        P = problem.components[i - 1]
        _, tr = evaluate(P, x)
        s = s + backward_ad(P, tr).gradient
    return s / len(I)


@dataclass
class OptimRun:
    seed: int
    run_id: int
    x0: list
    schedule: dict
    iters: int
    radius: float
    stride: int
    batch: str
    records: list = field(default_factory=list)  # (k, gamma_k, x_k, J(x_k), mask_k)
    x_final: list = None
    x_tail_mean: list = None
    steps: int = 0
    aborted: bool = False

    @property
    def J(self):
        return [r[3] for r in self.records]

    def to_dict(self):
        d = asdict(self)
        d["schema_version"] = 1
        return d

    def to_json(self):
        return json.dumps(self.to_dict())

    def write_csv(self, path):
        path = Path(path)
        p = len(self.x0)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "gamma"] + [f"x{i + 1}" for i in range(p)] + ["J", "batch"])
            for k, gamma, x, J, mask in self.records:
                w.writerow([k, repr(gamma)] + [repr(v) for v in x] + [repr(J), format(mask, "x")])
        return path


def _norm2(x):
    acc = 0.0
    for v in x:
        acc = acc + v * v
    return acc


def sgd_run(
    problem: FiniteSumProblem,
    x0,
    schedule: StepSchedule,
    iters: int,
    seed: int = 0,
    R: float = 1e6,
    run_id: int = 0,
    backend: str = "compiled",
    batch: str = "random",
    stride: int = None,
) -> OptimRun:
    """Iterate x_{k+1} = x_k - gamma_k * mean_{i in I_k} grad f_i(x_k).

    Records (k, gamma_k, x_k, J(x_k), mask_k) every ``stride`` steps plus the
    final iterate.  Stops early with ``aborted`` once |x| > R.  A domain fault
    at an iterate is raised as DomainFault after recording the run so far.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    x = [float(v) for v in np.ravel(np.asarray(x0, dtype=float))]
    if len(x) != problem.p:
        raise ValueError(f"x0 has length {len(x)}, problem has dimension {problem.p}")
    if not math.sqrt(_norm2(x)) < R:
        raise ValueError("x0 must lie inside the abort radius")
    if backend not in ("compiled", "interpreter"):
        raise ValueError(f"unknown backend {backend!r}")
    stride = max(1, iters // 1000) if stride is None else int(stride)
    n = problem.n
    if batch == "random":
        masks = draw_masks(run_rng(seed, run_id), n, iters)
    elif batch == "full":
        masks = [(1 << n) - 1] * iters
    else:
        raise ValueError(f"unknown batch law {batch!r}")
    counts = [m.bit_count() for m in masks]
    gammas = schedule.gammas(iters)
    tail_start = iters - max(1, iters // 100)
    r2 = R * R

    run = OptimRun(seed, run_id, list(x), asdict(schedule), iters, R, stride, batch)
    tail = [0.0] * len(x)
    k = 0
    status = 0
    while k < iters:
        if k % stride == 0:
            run.records.append((k, gammas[k], tuple(x), problem.value(x), masks[k]))
        k1 = min(iters, (k // stride + 1) * stride)
        if k < tail_start < k1:
            k1 = tail_start
        acc = k >= tail_start
        if backend == "compiled":
            status, k_end, xt, tt = problem.kernel()(tuple(x), gammas, masks, counts, k, k1, r2, tuple(tail), acc)
            x, tail = list(xt), list(tt)
        else:
            status, k_end, x, tail = _interpreted_steps(problem, x, gammas, masks, counts, k, k1, r2, tail, acc)
        if status == 2:
            run.steps = k_end
            run.x_final = list(x)
            # re-run the failing step in the interpreter for a diagnostic
            _interpreted_steps(problem, x, gammas, masks, counts, k_end, k_end + 1, r2, list(tail), acc, strict=True)
            raise RuntimeError("generated kernel faulted where the interpreter did not")  # pragma: no cover
        if status == 1:
            run.aborted = True
            k = k_end + 1
            break
        k = k_end
    run.steps = k
    run.x_final = list(x)
    # final row: mask 0 marks "no step taken"
    run.records.append((k, schedule.gamma(k), tuple(x), _safe_value(problem, x), 0))
    if not run.aborted:
        run.x_tail_mean = [t / (iters - tail_start) for t in tail]
    return run


def _safe_value(problem, x):
    try:
        return problem.value(x)
    except (DomainFault, OverflowError, ValueError):
        return float("nan")


def _interpreted_steps(problem, x, gammas, masks, counts, k0, k1, r2, tail, accumulate, strict=False):
    n = problem.n
    x = np.array(x, dtype=float)
    tail = list(tail)
    for k in range(k0, k1):
        try:
            s = np.zeros(problem.p)
            for i in mask_members(masks[k], n):
                P = problem.components[i - 1]
                _, tr = evaluate(P, x)
                s = s + backward_ad(P, tr).gradient
        except (DomainFault, sel.TotalityError, OverflowError, ZeroDivisionError):
            if strict:
                raise
            return 2, k, [float(v) for v in x], tail
        x = x - gammas[k] * (s / counts[k])
        xs = [float(v) for v in x]
        if accumulate:
            tail = [t + v for t, v in zip(tail, xs)]
        if _norm2(xs) > r2:
            return 1, k, xs, tail
    return 0, k1, [float(v) for v in x], tail


# ---------------------------------------------------------- classification


@dataclass
class RunVerdict:
    j_converged: bool
    oscillation: float
    report: object  # CriticalityReport at the terminal point
    aborted: bool

    @property
    def selection_critical(self):
        return self.report is not None and self.report.selection_critical

    @property
    def classification(self):
        return "aborted" if self.report is None else self.report.classification

    def to_dict(self):
        return {
            "j_converged": self.j_converged,
            "oscillation": self.oscillation,
            "aborted": self.aborted,
            "classification": self.classification,
            "report": None if self.report is None else self.report.to_dict(),
        }


def cauchy_tail(J, frac=0.1, rtol=1e-4):
    """(passes, oscillation) of the last ``frac`` of the recorded J values."""
    J = [v for v in J if not math.isnan(v)]
    if not J:
        return False, float("inf")
    tail = J[-max(2, int(len(J) * frac)):]
    osc = max(tail) - min(tail)
    return osc <= rtol * (1.0 + abs(J[-1])), osc


def classify_run(run: OptimRun, problem: FiniteSumProblem, tol_D=1e-6, tol_C=1e-3, radius=1e-3, n_samples=200, rng=None):
    if run.aborted:
        return RunVerdict(False, float("inf"), None, True)
    ok, osc = cauchy_tail(run.J)
    rng = run_rng(run.seed, run.run_id + (1 << 32)) if rng is None else rng
    report = classify(problem.objective_program(), run.x_final, tol_D, tol_C, radius, n_samples, rng)
    return RunVerdict(ok, osc, report, False)


# ---------------------------------------------------------- trap experiment


@dataclass
class TrapSummary:
    n_runs: int
    artificial_critical: int
    aborted: int
    classifications: dict
    terminal_points: list
    histogram: dict
    c_law: tuple
    x0_law: tuple
    within_target: int = None
    target: list = None
    target_radius: float = None

    @property
    def artificial_fraction(self):
        return self.artificial_critical / self.n_runs if self.n_runs else 0.0

    def to_dict(self):
        d = asdict(self)
        d["schema_version"] = 1
        d["artificial_fraction"] = self.artificial_fraction
        return d


def draw_start(seed, run_id, p, c_law, x0_law):
    """(x0, c) for one run: x0 uniform in the box, c uniform in (low, high]."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(run_id), 1])))
    lo, hi = x0_law
    x0 = rng.uniform(lo, hi, p)
    c_lo, c_hi = c_law
    c = c_hi - (c_hi - c_lo) * rng.random()
    return x0, float(c)


def _one_run(args):
    problem, seed, run_id, c_law, x0_law, kind, beta, iters, R, classify_kw = args
    x0, c = draw_start(seed, run_id, problem.p, c_law, x0_law)
    run = sgd_run(problem, x0, StepSchedule(c, kind, beta), iters, seed, R, run_id)
    verdict = classify_run(run, problem, **classify_kw)
    return run.x_final, verdict.classification, run.aborted


def trap_avoidance_experiment(
    problem: FiniteSumProblem,
    n_inits: int,
    c_law=(0.0, 1.0),
    schedule_kind="power",
    iters=10_000,
    seed=0,
    x0_law=(-2.0, 2.0),
    beta=0.6,
    R=1e6,
    target=None,
    target_radius=1e-2,
    workers=None,
    bins=20,
    classify_kw=None,
) -> TrapSummary:
    """Run SGD from n_inits random (x0, c) pairs and count artificial-critical limits."""
    classify_kw = dict(classify_kw or {})
    jobs = [(problem, seed, r, tuple(c_law), tuple(x0_law), schedule_kind, beta, iters, R, classify_kw) for r in range(n_inits)]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_one_run, jobs, chunksize=max(1, n_inits // (4 * workers))))
    else:
        results = [_one_run(j) for j in jobs]
    counts = {}
    for _, label, _ in results:
        counts[label] = counts.get(label, 0) + 1
    finals = [list(x) for x, _, _ in results]
    first = np.array([x[0] for x in finals])
    finite = first[np.isfinite(first)]
    hist, edges = np.histogram(finite, bins=bins) if finite.size else (np.zeros(0), np.zeros(0))
    summary = TrapSummary(
        n_runs=n_inits,
        artificial_critical=counts.get(ARTIFICIAL_CRITICAL, 0),
        aborted=sum(1 for _, _, a in results if a),
        classifications=counts,
        terminal_points=finals,
        histogram={"counts": hist.tolist(), "edges": edges.tolist()},
        c_law=tuple(c_law),
        x0_law=tuple(x0_law),
    )
    if target is not None:
        t = np.ravel(np.asarray(target, dtype=float))
        summary.target = t.tolist()
        summary.target_radius = target_radius
        summary.within_target = sum(1 for x in finals if np.linalg.norm(np.asarray(x) - t) <= target_radius)
    return summary
