"""Command-line front end: ``seldiff <command> ...``.

Exit status is 0 when every numeric contract of the command holds, 1 when a
contract fails (a JSON failure record goes to stderr) and 2 for unusable input.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import autodiff, fixtures, setfield, verify
from . import selection as sel
from .dsl import DslError, load
from .expr import DomainFault
from .optimize import FiniteSumProblem, StepSchedule, classify_run, sgd_run, trap_avoidance_experiment
from .program import evaluate, to_selection

SCHEMA_VERSION = 1


class InputError(Exception):
    pass


# ---------------------------------------------------------- helpers


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, float) and not np.isfinite(v):
        return repr(v)
    return v


def _program(path, fn):
    try:
        return load(path, fn).program
    except OSError as err:
        raise InputError(f"{path}: {err.strerror or err}") from None
    except DslError as err:
        raise InputError("\n".join(f"{path}:{d}" for d in err.diagnostics)) from None


def _point(P, values, flag="--at"):
    if len(values) != P.p:
        raise InputError(f"{flag} needs {P.p} value(s) for {P.name!r}, got {len(values)}")
    return np.asarray(values, dtype=float)


def _table(headers, rows):
    cells = [[str(h) for h in headers]] + [[_fmt(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.12g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "(" + ", ".join(_fmt(float(x)) for x in v) + ")"
    return str(v)


def _write_csv(directory, name, headers, rows):
    if directory is None:
        return None
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    path = d / name
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(headers)
        w.writerows(_jsonable(list(rows)))
    return path


def _finish(args, doc, text, ok=True, failures=()):
    doc = {"schema_version": SCHEMA_VERSION, "command": args.command, "ok": bool(ok), **doc}
    if failures:
        doc["failures"] = list(failures)
    if args.json:
        print(json.dumps(_jsonable(doc), indent=2))
    else:
        print(text)
        if not ok:
            record = {"schema_version": SCHEMA_VERSION, "command": args.command, "failures": list(failures)}
            print(json.dumps(_jsonable(record)), file=sys.stderr)
    return 0 if ok else 1


# ---------------------------------------------------------- commands


def cmd_eval(args):
    P = _program(args.file, args.fn)
    x = _point(P, args.at)
    y, trace = evaluate(P, x)
    branches = {i: trace.branches[i - 1] for i in range(P.p + 1, P.m + 1)}
    text = f"{args.fn}{_fmt(list(x))} = {_fmt(float(y[0]))}\nbranches: " + " ".join(f"{i}:{b}" for i, b in branches.items())
    return _finish(args, {"fn": args.fn, "at": x, "value": float(y[0]), "branches": branches}, text)


def cmd_grad(args):
    P = _program(args.file, args.fn)
    x = _point(P, args.at)
    modes = ("forward", "backward") if args.mode == "both" else (args.mode,)
    grads = {m: autodiff.grad(P, x, m) for m in modes}
    doc = {"fn": args.fn, "at": x, **{m: g for m, g in grads.items()}}
    rows = [(m, g) for m, g in grads.items()]
    ok, failures = True, []
    if args.mode == "both":
        chk = autodiff.check_modes_agree(P, x)
        doc["discrepancy"] = chk.discrepancy
        rows.append(("discrepancy", chk.discrepancy))
        ok = chk.ok(args.tol)
        if not ok:
            failures.append({"contract": "forward == backward", "discrepancy": chk.discrepancy, "tol": args.tol})
    text = _table(["mode", "gradient"], rows)
    return _finish(args, doc, text, ok, failures)


def cmd_check_identity(args):
    if not 0 < args.p < args.m:
        raise InputError("need 0 < p < m")
    rng = np.random.default_rng(args.seed)
    rows = []
    worst = 0.0
    failures = []
    for t in range(args.trials):
        ds = rng.standard_normal((args.m - args.p, args.m))
        chk = autodiff.check_backprop_identity(args.p, args.m, ds)
        rel = chk.discrepancy / max(1.0, chk.scale)
        worst = max(worst, rel)
        rows.append((t, chk.discrepancy, chk.scale))
        if not chk.ok(args.tol):
            failures.append({"trial": t, "discrepancy": chk.discrepancy, "scale": chk.scale})
    _write_csv(args.csv, "identity.csv", ["trial", "discrepancy", "scale"], rows)
    doc = {"p": args.p, "m": args.m, "trials": args.trials, "max_relative_discrepancy": worst, "tol": args.tol}
    text = f"p={args.p} m={args.m} trials={args.trials} max relative discrepancy={worst:.3e} (tol {args.tol:g})"
    return _finish(args, doc, text, not failures, failures)


def cmd_dfield(args):
    P = _program(args.file, args.fn)
    x = _point(P, args.at)
    D = setfield.active_generators(P, x, args.tol_active)
    mn = setfield.min_norm_point(D.generators)
    doc = {
        "fn": args.fn,
        "at": x,
        "generators": D.generators,
        "active": [list(a) if isinstance(a, tuple) else a for a in D.active],
        "tol_active": D.tol_active,
        "truncated": D.truncated,
        "min_norm_point": mn.point,
        "min_norm": mn.norm,
        "weights": mn.weights,
    }
    text = _table(["generator", "weight"], [(g, float(w)) for g, w in zip(D.generators, mn.weights)])
    text += f"\nmin-norm point {_fmt(mn.point)}  norm {mn.norm:.6g}"
    return _finish(args, doc, text)


def cmd_classify(args):
    P = _program(args.file, args.fn)
    x = _point(P, args.at)
    rng = np.random.default_rng(args.seed)
    try:
        rep = setfield.classify(P, x, args.tol_d, args.tol_c, args.radius, args.samples, rng, args.tol_active)
    except setfield.InsufficientSamples as err:
        return _finish(args, {"fn": args.fn, "at": x}, str(err), False, [{"contract": "certified samples", "error": str(err)}])
    text = f"{args.fn} at {_fmt(list(x))}: {rep.classification}  d_sel={rep.d_selection:.3e}  d_clarke={rep.d_clarke:.3e}"
    return _finish(args, {"fn": args.fn, "report": rep.to_dict()}, text)


def _read_path(path):
    try:
        return verify.PiecewisePath.from_json(Path(path).read_text())
    except OSError as err:
        raise InputError(f"{path}: {err.strerror or err}") from None
    except (ValueError, KeyError, TypeError) as err:
        raise InputError(f"{path}: not a path document: {err}") from None


def cmd_integrate(args):
    P = _program(args.file, args.fn)
    path = _read_path(args.path)
    if path.vertices.shape[1] != P.p:
        raise InputError(f"path vertices have dimension {path.vertices.shape[1]}, {args.fn!r} takes {P.p}")
    rules = verify.RULES if args.rule == "all" else (args.rule,)
    rng = np.random.default_rng(args.seed)
    reports = [verify.integrate_selection_gradient(P, path, r, rng, args.tol_active) for r in rules]
    rows = [(r.rule, r.estimate, r.difference, r.residual, r.subsegments) for r in reports]
    headers = ["rule", "integral", "f(end)-f(start)", "residual", "pieces"]
    _write_csv(args.csv, "residuals.csv", headers, [[r[0]] + [repr(float(v)) for v in r[1:4]] + [r[4]] for r in rows])
    failures = [{"rule": r.rule, "residual": r.residual, "tol": args.tol} for r in reports if not r.ok(args.tol)]
    doc = {"fn": args.fn, "reports": [r.to_dict() for r in reports]}
    return _finish(args, doc, _table(headers, rows), not failures, failures)


def cmd_verify(args):
    P = _program(args.file, args.fn)
    rng = np.random.default_rng(args.seed)
    failures = []
    if args.suite == "ae":
        rep = verify.check_gradient_ae(P, args.points, rng, args.low, args.high)
        doc = {"suite": "ae", "points": rep.n_points, "disagreements": rep.disagreements, "failures_count": rep.failures,
               "certified": len(rep.certificates), "uncertified": rep.uncertified}
        text = (f"{rep.n_points} points, {rep.disagreements} disagreements, "
                f"{len(rep.certificates)} certified, {rep.failures} uncertified")
        if rep.failures:
            failures.append({"contract": "a.e. gradient", "uncertified": rep.uncertified[:20]})
    elif args.suite == "chain":
        if not args.inner:
            raise InputError("--suite chain needs --inner NAME[,NAME...]")
        outer = to_selection(P)
        inner = [to_selection(_program(args.file, name)) for name in args.inner.split(",")]
        if outer.arity != len(inner) or len({F.arity for F in inner}) != 1:
            raise InputError(f"{args.fn!r} takes {outer.arity} argument(s); --inner must list that many functions of one arity")
        worst = 0.0
        for y in rng.uniform(args.low, args.high, (args.points, inner[0].arity)):
            try:
                chk = verify.check_chain_rule(outer, inner, y)
            except DomainFault:
                continue
            worst = max(worst, chk.relative)
            if not chk.ok(args.tol):
                failures.append({"contract": "chain rule", "at": y, "discrepancy": chk.discrepancy})
        doc = {"suite": "chain", "points": args.points, "max_relative_discrepancy": worst}
        text = f"chain rule at {args.points} points: max relative discrepancy {worst:.3e}"
    else:
        x = np.zeros(P.p) if args.at is None else _point(P, args.at)
        dirs = rng.standard_normal((args.points, P.p))
        res = setfield.closed_graph_probe(P, x, dirs)
        doc = {"suite": "closedgraph", "at": x, "directions": len(dirs), "max_violation": res.max_violation}
        text = f"closed-graph probe at {_fmt(list(x))}: {len(dirs)} directions, max distance {res.max_violation:.3e}"
        if res.max_violation > 1e-6:
            failures.append({"contract": "closed graph", "max_violation": res.max_violation})
    return _finish(args, doc, text, not failures, failures)


def _problem(args):
    names = [s for s in args.sum.split(",") if s]
    if not names:
        raise InputError("--sum needs at least one function name")
    comps = [_program(args.file, name) for name in names]
    if len({P.p for P in comps}) != 1:
        raise InputError("the summed functions must share their arity")
    return FiniteSumProblem(comps, Path(args.file).stem)


def cmd_sgd(args):
    problem = _problem(args)
    x0 = _point(problem.components[0], args.x0, "--x0")
    schedule = StepSchedule(args.c, args.schedule, args.beta)
    run = sgd_run(problem, x0, schedule, args.iters, args.seed, args.R, args.run_id, batch=args.batch)
    verdict = classify_run(run, problem, tol_D=args.tol_d, rng=np.random.default_rng(args.seed))
    if args.csv:
        Path(args.csv).mkdir(parents=True, exist_ok=True)
        run.write_csv(Path(args.csv) / "trace.csv")
    failures = []
    if run.aborted:
        failures.append({"contract": "bounded iterates", "radius": args.R})
    else:
        if not verdict.j_converged:
            failures.append({"contract": "J tail Cauchy", "oscillation": verdict.oscillation})
        if not verdict.selection_critical:
            failures.append({"contract": "terminal min-norm", "d_selection": verdict.report.d_selection, "tol": args.tol_d})
    doc = {"run": {k: v for k, v in run.to_dict().items() if k != "records"}, "verdict": verdict.to_dict()}
    text = f"x_final {_fmt(run.x_final)}  J {run.J[-1]:.12g}  steps {run.steps}  {verdict.classification}"
    return _finish(args, doc, text, not failures, failures)


def cmd_experiment(args):
    problem = _problem(args)
    summary = trap_avoidance_experiment(
        problem, args.inits, tuple(args.c_law), args.schedule, args.iters, args.seed, tuple(args.x0_law), args.beta,
        args.R, args.target, args.target_radius, args.workers,
    )
    _write_csv(args.csv, "terminal_points.csv", [f"x{i + 1}" for i in range(problem.p)],
               [[repr(float(v)) for v in x] for x in summary.terminal_points])
    failures = []
    if summary.artificial_critical:
        failures.append({"contract": "no artificial-critical limits", "count": summary.artificial_critical})
    text = _table(["classification", "runs"], sorted(summary.classifications.items()))
    if summary.target is not None:
        text += f"\nwithin {summary.target_radius:g} of {_fmt(summary.target)}: {summary.within_target}/{summary.n_runs}"
    doc = summary.to_dict()
    if not args.keep_points:
        doc.pop("terminal_points")
    return _finish(args, doc, text, not failures, failures)


def cmd_demo(args):
    rows, failures = [], []
    for name, factory, expected in fixtures.RELU_VARIANT_SLOPES:
        P = factory()
        fw = float(autodiff.grad(P, [0.0], "forward")[0])
        bw = float(autodiff.grad(P, [0.0], "backward")[0])
        rows.append((name, 0.0, bw, fw))
        if not (fw == expected and bw == expected):
            failures.append({"program": name, "forward": fw, "backward": bw, "expected": expected})
    _write_csv(args.csv, "relu_variants.csv", ["program", "x", "backward", "forward"], rows)
    doc = {"rows": [{"program": r[0], "x": r[1], "backward": r[2], "forward": r[3]} for r in rows]}
    return _finish(args, doc, _table(["program", "x", "backward", "forward"], rows), not failures, failures)


def cmd_prescribe(args):
    P = _program(args.file, args.fn)
    s = _point(P, args.at)
    Q = autodiff.prescribe_derivative(P, s, args.shift, args.coord)
    before = autodiff.grad(P, s)
    after = autodiff.grad(Q, s)
    want = before.copy()
    want[args.coord] = before[args.coord] + args.shift
    failures = []
    if not np.array_equal(after, want):
        failures.append({"contract": "derivative shift", "expected": want, "got": after})
    rng = np.random.default_rng(args.seed)
    changed = 0
    for y in s + rng.uniform(-args.spread, args.spread, (args.samples, P.p)):
        try:
            if evaluate(P, y)[0][0] != evaluate(Q, y)[0][0]:
                changed += 1
        except DomainFault:
            continue
    if changed:
        failures.append({"contract": "values unchanged", "changed": changed})
    doc = {"fn": args.fn, "at": s, "shift": args.shift, "gradient_before": before, "gradient_after": after,
           "samples": args.samples, "values_changed": changed}
    text = _table(["", "gradient"], [("original", before), ("prescribed", after)])
    text += f"\nvalues changed on {changed}/{args.samples} samples"
    return _finish(args, doc, text, not failures, failures)


# ---------------------------------------------------------- parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--csv", metavar="DIR", help="write CSV traces into DIR")

    parser = argparse.ArgumentParser(prog="seldiff", description="Selection derivatives of piecewise-smooth programs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_, file=True, fn=True):
        p = sub.add_parser(name, parents=[common], help=help_)
        if file:
            p.add_argument("file", help=".sel source")
        if fn:
            p.add_argument("--fn", required=True, help="function to compile")
        p.set_defaults(func=func)
        return p

    p = add("eval", cmd_eval, "evaluate a function")
    p.add_argument("--at", type=float, nargs="+", required=True)

    p = add("grad", cmd_grad, "AD gradient")
    p.add_argument("--at", type=float, nargs="+", required=True)
    p.add_argument("--mode", choices=("forward", "backward", "both"), default="backward")
    p.add_argument("--tol", type=float, default=1e-12)

    p = add("check-lemma1", cmd_check_identity, "backprop product identity on random matrices", file=False, fn=False)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-12)

    p = add("dfield", cmd_dfield, "active-branch gradients and their min-norm point")
    p.add_argument("--at", type=float, nargs="+", required=True)
    p.add_argument("--tol-active", type=float)

    p = add("classify", cmd_classify, "criticality taxonomy at a point")
    p.add_argument("--at", type=float, nargs="+", required=True)
    p.add_argument("--tol-active", type=float)
    p.add_argument("--tol-d", type=float, default=1e-8)
    p.add_argument("--tol-c", type=float, default=1e-3)
    p.add_argument("--radius", type=float, default=1e-3)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)

    p = add("integrate", cmd_integrate, "integrate a selection of D_f along a polyline")
    p.add_argument("--path", required=True, help="JSON array of vertices or a path document")
    p.add_argument("--rule", choices=verify.RULES + ("all",), default="selection")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--tol-active", type=float)
    p.add_argument("--seed", type=int, default=0)

    p = add("verify", cmd_verify, "a.e. gradient, chain rule or closed-graph checks")
    p.add_argument("--suite", choices=("ae", "chain", "closedgraph"), required=True)
    p.add_argument("--points", type=int, default=1000)
    p.add_argument("--low", type=float, default=-1.0)
    p.add_argument("--high", type=float, default=1.0)
    p.add_argument("--inner", help="comma-separated inner functions for --suite chain")
    p.add_argument("--at", type=float, nargs="+", help="base point for --suite closedgraph")
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--seed", type=int, default=0)

    def sgd_flags(p):
        p.add_argument("--sum", required=True, help="comma-separated component functions")
        p.add_argument("--beta", type=float, default=0.6)
        p.add_argument("--schedule", choices=("power", "log-damped"), default="power")
        p.add_argument("--iters", type=int, default=10_000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--R", type=float, default=1e6, help="abort radius")

    p = add("sgd", cmd_sgd, "minibatch SGD on a finite sum", fn=False)
    sgd_flags(p)
    p.add_argument("--x0", type=float, nargs="+", required=True)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--run-id", type=int, default=0)
    p.add_argument("--batch", choices=("random", "full"), default="random")
    p.add_argument("--tol-d", type=float, default=1e-6)

    exp = sub.add_parser("experiment", help="batch experiments")
    exp_sub = exp.add_subparsers(dest="experiment", required=True)
    p = exp_sub.add_parser("traps", parents=[common], help="trap avoidance from random starts")
    p.add_argument("file")
    sgd_flags(p)
    p.add_argument("--inits", type=int, required=True)
    p.add_argument("--c-law", type=float, nargs=2, default=(0.0, 1.0), metavar=("LOW", "HIGH"))
    p.add_argument("--x0-law", type=float, nargs=2, default=(-2.0, 2.0), metavar=("LOW", "HIGH"))
    p.add_argument("--target", type=float, nargs="+")
    p.add_argument("--target-radius", type=float, default=1e-2)
    p.add_argument("--workers", type=int)
    p.add_argument("--keep-points", action="store_true", help="include terminal points in JSON")
    p.set_defaults(func=cmd_experiment)

    demo = sub.add_parser("demo", help="built-in demonstrations")
    demo_sub = demo.add_subparsers(dest="demo", required=True)
    p = demo_sub.add_parser("figure1", parents=[common], help="derivatives of relu variants at 0")
    p.set_defaults(func=cmd_demo)

    p = add("prescribe", cmd_prescribe, "shift the AD derivative at a point without changing values")
    p.add_argument("--at", type=float, nargs="+", required=True)
    p.add_argument("--shift", type=float, required=True)
    p.add_argument("--coord", type=int, default=0)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--spread", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as err:
        print(f"seldiff: {err}", file=sys.stderr)
        return 2
    except (DomainFault, sel.TotalityError) as err:
        print(f"seldiff: {err}", file=sys.stderr)
        print(json.dumps({"schema_version": SCHEMA_VERSION, "command": args.command, "failures": [{"error": str(err)}]}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
