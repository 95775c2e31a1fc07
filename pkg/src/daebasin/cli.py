"""Command-line front end.

Exit codes: 0 success, 2 usage or input error, 3 numeric failure,
4 verification failure.
"""
import argparse
import os
import sys

import numpy as np

from . import analysis, branching, dynamics
from .dynamics import Options
from .errors import DAEError, UsageError
from .model import builtin, load_problem
from .reduction import linearize

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4
DEFAULT_SEED = 0


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _add_common(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--builtin", metavar="NAME", help="example1 | example2 | example3")
    src.add_argument("--file", metavar="PATH", help="problem definition (JSON)")
    p.add_argument("--N", type=int, help="example1: quadrature nodes (default 64)")
    p.add_argument("--alpha", type=float, help="example3 parameter")
    p.add_argument("--beta", type=float, help="example3 parameter")
    p.add_argument("--a", type=float, help="example3 parameter")
    p.add_argument("--b", type=float, help="example3 parameter")
    p.add_argument("--perturbation", type=float, help="example2: amplitude c of c*exp(-t) added to A1")
    p.add_argument("--tol", type=float, default=1e-10, help="integrator relative tolerance")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", metavar="DIR", help="write report and CSV files here")
    p.add_argument("--json", action="store_true", help="print the JSON report")


def _add_x0(p, required=True):
    p.add_argument("--x0", required=required, help="initial state v1,v2,... (a single value is broadcast)")
    p.add_argument("--T", type=float, default=10.0, help="final time")


def build_parser():
    parser = argparse.ArgumentParser(prog="daebasin", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="stability and basin certificate")
    _add_common(p)
    p.add_argument("--samples", type=int, default=2000, help="sample pairs per radius")
    p.add_argument("--r-max", type=float, default=1.0)
    p.add_argument("--radii", type=int, default=40, help="number of radii")
    p.add_argument("--margin", type=float, default=0.1)
    p.add_argument("--q-star", type=float, default=0.5)

    p = sub.add_parser("simulate", help="integrate one trajectory")
    _add_common(p)
    _add_x0(p)
    p.add_argument("--method", choices=["rk", "volterra"], default="rk")
    p.add_argument("--grid", type=int, default=2000, help="output grid (volterra)")
    p.add_argument("--sweeps", type=int, default=30)
    p.add_argument("--branch", type=int, help="branch index for singular A4")

    p = sub.add_parser("sweep", help="classify many initial states")
    _add_common(p)
    p.add_argument("--deltas", required=True,
                   help="offsets from the rest point; ';' separates states, ',' components")
    p.add_argument("--T", type=float, default=10.0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--branch", type=int, help="branch index for singular A4")

    p = sub.add_parser("branches", help="branches of a degenerate constraint")
    _add_common(p)
    _add_x0(p, required=False)

    p = sub.add_parser("iterate", help="coupled successive approximations")
    _add_common(p)
    _add_x0(p)
    p.add_argument("--iterations", type=int, default=16)
    p.add_argument("--grid", type=int, default=2048)

    p = sub.add_parser("verify", help="builtin oracle suite")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--json", action="store_true")
    return parser


def load(args):
    if args.file:
        return load_problem(args.file)
    params = {k: getattr(args, k) for k in ("N", "alpha", "beta", "a", "b", "perturbation")
              if getattr(args, k) is not None}
    return builtin(args.builtin, params)


def _state(text, problem):
    v = _floats(text)
    if len(v) == 1:
        v = v * problem.n
    if len(v) != problem.n:
        raise UsageError(f"--x0 needs 1 or {problem.n} values, got {len(v)}")
    return np.array(v)


def _options(args):
    return Options(rtol=args.tol, atol=args.tol * 1e-2)


def _pick_branch(problem, index):
    spec = branching.BranchingSpec.from_problem(problem)
    bs = branching.enumerate_branches(spec)
    if index is None:
        raise UsageError(f"A4 is singular: choose --branch 0..{len(bs.branches) - 1}")
    if not 0 <= index < len(bs.branches):
        raise UsageError(f"--branch must lie in 0..{len(bs.branches) - 1}")
    return bs.branches[index]


def _write(out, name, text):
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, name), "w", newline="") as fh:
        fh.write(text)


def cmd_analyze(args, problem):
    radii = np.linspace(args.r_max / args.radii, args.r_max, args.radii)
    rep = analysis.analyze(problem, radii=radii, samples=args.samples, seed=args.seed,
                           margin=args.margin, q_star=args.q_star)
    return rep, analysis.render_text(rep), {}


def cmd_simulate(args, problem):
    x_init = _state(args.x0, problem)
    opts = _options(args)
    lin = linearize(problem)
    if not lin.a4_invertible:
        br = _pick_branch(problem, args.branch)
        traj = branching.simulate_branch(problem, br, x_init, args.T, opts, allow_unstable=True)
    elif args.method == "volterra":
        traj = dynamics.volterra_picard(lin, x_init, args.T, grid=args.grid, sweeps=args.sweeps, opts=opts)
    else:
        traj = dynamics.integrate_reduced(lin, x_init, args.T, opts)
    rep = {"problem": problem.name, "x0": x_init, "T": args.T,
           "outcome": traj.outcome.to_dict(), "error_estimate": traj.error_estimate}
    if traj.u_fallback is not None and traj.u_fallback.any():
        rep["u_fallback_points"] = int(traj.u_fallback.sum())
    text = f"outcome: {traj.outcome}\n"
    return rep, text, {"trajectory.csv": dynamics.trajectory_csv(traj)}


def cmd_sweep(args, problem):
    deltas = [_state(part, problem) for part in args.deltas.split(";") if part.strip()]
    lin = linearize(problem)
    br = None if lin.a4_invertible else _pick_branch(problem, args.branch)
    res = dynamics.delta_sweep(problem, [problem.x0 + d for d in deltas], args.T, lin=lin,
                               branch=br, opts=_options(args), max_workers=args.workers)
    rep = {"problem": problem.name, "T": args.T,
           "records": [{"delta": r.delta, "kind": r.kind,
                        **({"outcome": r.outcome.to_dict()} if r.outcome else {"error": r.error})}
                       for r in res.records],
           "boundaries": res.boundaries}
    lines = [f"{', '.join(f'{v:g}' for v in r.delta):>16}  {r.outcome or r.error['code']}"
             for r in res.records]
    lines += [f"boundary between {b['between'][0]:g} and {b['between'][1]:g}: "
              f"{b['kinds'][0]} -> {b['kinds'][1]}" for b in res.boundaries]
    return rep, "\n".join(lines) + "\n", {"sweep.csv": dynamics.sweep_csv(res)}


def cmd_branches(args, problem):
    rep = {"problem": problem.name, **analysis.branch_report(problem)}
    text = analysis.render_text({"problem": problem.name, "n": problem.n, "m": problem.m,
                                 "a4_invertible": False, "branches": rep})
    files = {}
    if args.x0 is not None:
        x_init = _state(args.x0, problem)
        bs = branching.enumerate_branches(branching.BranchingSpec.from_problem(problem))
        sims = []
        for i, b in enumerate(bs.branches):
            if not b.admissible:
                continue
            traj = branching.simulate_branch(problem, b, x_init, args.T, _options(args), allow_unstable=True)
            sims.append({"branch": i, "roots": b.roots, "outcome": traj.outcome.to_dict(),
                         "constraint_residual": traj.info["constraint_residual"]})
            files[f"branch{i}.csv"] = dynamics.trajectory_csv(traj)
            text += f"branch {i}: {traj.outcome}\n"
        rep["simulations"] = sims
    return rep, text, files


def cmd_iterate(args, problem):
    x_init = _state(args.x0, problem)
    res = dynamics.successive_approximations(problem, x_init, args.iterations, args.T,
                                             grid=args.grid, opts=_options(args))
    rows = []
    for k, tr in enumerate(res.iterates):
        rows.append({"iterate": k + 1, "outcome": tr.outcome.kind,
                     "gap": res.gaps[k - 1] if 0 < k <= len(res.gaps) else None,
                     "residual": res.residuals[k] if k < len(res.residuals) else None})
    rep = {"problem": problem.name, "x0": x_init, "T": args.T, "iterates": rows,
           "warnings": res.warnings}
    lines = [f"{'n':>4}  {'sup gap':>12}  {'sup |G|':>12}  outcome"]
    for r in rows:
        gap = "" if r["gap"] is None else f"{r['gap']:.4e}"
        resid = "" if r["residual"] is None else f"{r['residual']:.4e}"
        lines.append(f"{r['iterate']:>4}  {gap:>12}  {resid:>12}  {r['outcome']}")
    files = {f"iterate{k + 1:03d}.csv": dynamics.trajectory_csv(tr) for k, tr in enumerate(res.iterates)}
    return rep, "\n".join(lines) + "\n", files


def cmd_verify(args):
    rep = analysis.verify(seed=args.seed)
    lines = [f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}" for c in rep["checks"]]
    return rep, "\n".join(lines) + "\n", {}


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "sweep": cmd_sweep,
            "branches": cmd_branches, "iterate": cmd_iterate}


def run(args, stdout=None):
    """Execute parsed ``args``; returns the exit code."""
    stdout = stdout or sys.stdout
    try:
        if args.command == "verify":
            rep, text, files = cmd_verify(args)
            code = EXIT_OK if rep["passed"] else EXIT_VERIFY
        else:
            problem = load(args)
            rep, text, files = COMMANDS[args.command](args, problem)
            code = EXIT_OK
    except DAEError as exc:
        err = {"error": exc.to_dict()}
        if args.json:
            stdout.write(analysis.dumps(err))
        else:
            print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        if args.out:
            _write(args.out, "report.json", analysis.dumps(err))
        return exc.exit_code

    payload = analysis.dumps(rep)
    if args.out:
        _write(args.out, "report.json", payload)
        for name, content in files.items():
            _write(args.out, name, content)
    stdout.write(payload if args.json else text)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
