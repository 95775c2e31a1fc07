"""Analysis pipeline and the builtin verification suite.

Reports are plain dicts of JSON-ready values so that the same content can
be rendered as text or serialized deterministically.
"""
import json
import math

import numpy as np

from . import branching, dynamics, stability
from .dynamics import Options
from .errors import DAEError
from .exprparse import evaluate, parse, to_text
from .model import builtin, inverse_rank_one_coefficient
from .reduction import linearize

__all__ = ["analyze", "branch_report", "render_text", "verify", "dumps", "VERIFY_SAMPLES"]

VERIFY_SAMPLES = 500


def dumps(obj):
    """Deterministic JSON text (sorted keys, shortest round-trip floats)."""
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else repr(f)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _eig_list(M):
    vals = np.linalg.eigvals(M)
    vals = vals[np.lexsort((vals.imag, vals.real))]
    return [[float(z.real), float(z.imag)] for z in vals]


def analyze(problem, radii=None, samples=stability.DEFAULT_SAMPLES, seed=0,
            margin=stability.DEFAULT_MARGIN, q_star=stability.DEFAULT_Q_STAR):
    """Stability and basin report for ``problem``.

    Runs linearization, the spectral test, decay constants, the sampled
    Lipschitz profile and the contraction radius.  A singular ``A4`` turns
    the report into a branch report when the problem carries a branching
    block.
    """
    lin = linearize(problem)
    rep = {
        "problem": problem.name,
        "n": problem.n,
        "m": problem.m,
        "a4_invertible": lin.a4_invertible,
        "warnings": list(lin.warnings),
    }
    if "kernel_matrix" in problem.meta:
        c, resid = inverse_rank_one_coefficient(problem.meta["kernel_matrix"])
        rep["inverse_rank_one"] = {
            "c": c,
            "residual": resid,
            "note": "(I + K)^{-1} = I - c K with c = 3/4 for the kernel z*s on [0, 1]; "
                    "c = 2/3 does not invert I + K",
        }
    if not lin.a4_invertible:
        rep["status"] = "degenerate"
        if problem.branching is not None:
            rep["branches"] = branch_report(problem, lin=lin)
        else:
            rep["warnings"].append("A4 singular and no branching block supplied")
        return rep

    stable, a = stability.spectral_test(lin.M)
    rep.update({
        "spectral_abscissa": a,
        "eigenvalues": _eig_list(lin.M),
        "stable": stable,
        "norm_A_inv": lin.norm_A_inv,
    })
    if not stable:
        rep["status"] = "unstable" if a > branching.MARGINAL_TOL else "marginal"
        return rep

    decay = stability.estimate_decay(lin.M, margin=margin)
    profile = stability.estimate_q(lin, radii=radii, samples=samples, seed=seed)
    basin = stability.basin_radius(decay, profile, lin.norm_A_inv, q_star=q_star)
    rep.update({
        "l": decay.l,
        "C": decay.C,
        "C_method": decay.method,
        "eps": decay.eps,
        "q_star": q_star,
        "samples": samples,
        "seed": seed,
        "q_table": [[float(r), float(q)] for r, q in zip(profile.radii, profile.q)],
        "contraction_factor": basin.factor,
        "r_star": basin.r_star,
        "delta_max": basin.delta_max,
        "status": basin.status,
    })
    rep["warnings"] += list(profile.notes) + list(basin.notes)
    return rep


def branch_report(problem, lin=None):
    spec = branching.BranchingSpec.from_problem(problem, lin=lin)
    bs = branching.enumerate_branches(spec)
    return {
        "roots": [[{"root": w, "simple": s} for w, s in per] for per in bs.roots],
        "branches": [b.to_dict() for b in bs.branches],
        "stable_count": len(bs.stable),
        "notes": bs.notes,
        "first_order_only": "branches use u_k = w_k x_k; higher-order corrections are not computed",
    }


def render_text(rep):
    """Human-readable rendering of an :func:`analyze` report."""
    lines = [f"problem: {rep['problem']} (n={rep['n']}, m={rep['m']})"]
    if not rep["a4_invertible"]:
        lines.append("A4 singular: degenerate constraint")
        br = rep.get("branches")
        if br:
            lines.append(f"{'roots':>24}  {'abscissa':>12}  verdict")
            for b in br["branches"]:
                roots = ", ".join(f"{w:.10g}" for w in b["roots"])
                lines.append(f"{roots:>24}  {b['abscissa']:>12.6g}  {b['verdict']}")
            lines += [f"note: {n}" for n in br["notes"]]
    else:
        lines.append(f"spectral abscissa: {rep['spectral_abscissa']:.10g}")
        if "l" in rep:
            lines.append(f"l = {rep['l']:.6g}  C = {rep['C']:.6g} ({rep['C_method']})  eps = {rep['eps']:.6g}")
            lines.append(f"{'r':>10}  {'q(r)':>12}")
            for r, q in rep["q_table"]:
                lines.append(f"{r:>10.6g}  {q:>12.6g}")
            lines.append(f"r* = {rep['r_star']:.6g}  delta_max = {rep['delta_max']:.6g}")
        lines.append(f"status: {rep['status']}")
    if "inverse_rank_one" in rep:
        iv = rep["inverse_rank_one"]
        lines.append(f"rank-one inverse coefficient c = {iv['c']:.12g} (residual {iv['residual']:.3g})")
        lines.append(f"note: {iv['note']}")
    lines += [f"warning: {w}" for w in rep.get("warnings", [])]
    return "\n".join(lines) + "\n"


# -- verification suite ---------------------------------------------------------

def _exact2(d, t):
    t = np.asarray(t, dtype=float)
    return d / (np.exp(t) * (1.0 - d) + d)


def _check(name, passed, **values):
    return {"name": name, "passed": bool(passed), **values}


def _verify_linear(checks):
    p = builtin("example2")
    lin = linearize(p)
    checks.append(_check("example2.reduced_operator", abs(lin.M[0, 0] + 1.0) <= 1e-8, M=lin.M[0, 0]))

    e = parse("sin(x1)^2 + 2*u1/(1 + x1^2)", 1, 1)
    again = parse(to_text(e), 1, 1)
    pt = {"x": np.array([0.3]), "u": np.array([-0.7]), "t": 0.0}
    from .exprparse import EvalContext
    ctx = EvalContext(pt["x"], pt["u"], 0.0)
    checks.append(_check("exprparse.round_trip", evaluate(e, ctx) == evaluate(again, ctx)))

    p1 = builtin("example1", {"N": 64})
    lin1 = linearize(p1)
    eig = np.linalg.eigvals(lin1.M)
    dev = float(np.max(np.abs(eig + 1.0)))
    c, resid = inverse_rank_one_coefficient(p1.meta["kernel_matrix"])
    checks.append(_check("example1.spectrum", dev <= 1e-8, max_deviation=dev))
    checks.append(_check("example1.inverse_coefficient", abs(c - 0.75) <= 1e-8, c=c, residual=resid))


def _verify_trajectories(checks, opts):
    p = builtin("example2")
    lin = linearize(p)
    for d in (0.5, -1.0, 0.9):
        o = Options(**{**opts.__dict__, "t_eval": tuple(np.linspace(0.0, 10.0, 1001))})
        tr = dynamics.integrate_reduced(lin, [d], 10.0, o)
        err = float(np.max(np.abs(tr.x_values[:, 0] - _exact2(d, tr.times))))
        checks.append(_check(f"example2.exact_solution[{d:g}]",
                             err <= 1e-6 and tr.outcome.kind == dynamics.STABILIZED,
                             sup_error=err, outcome=tr.outcome.kind))
    for d in (1.5, 2.0, 3.0, 10.0):
        tr = dynamics.integrate_reduced(lin, [d], 10.0, opts)
        t_star = math.log(d / (d - 1.0))
        br = tr.outcome.t_star_bracket
        ok = br is not None and br[0] <= t_star <= br[1] and br[1] - br[0] <= 1e-2
        checks.append(_check(f"example2.blowup[{d:g}]", ok, t_star=t_star,
                             bracket=list(br) if br else None, outcome=tr.outcome.kind))
    for d in (0.0, 1.0):
        tr = dynamics.integrate_reduced(lin, [d], 10.0, opts)
        drift = float(np.max(np.abs(tr.x_values[:, 0] - d)))
        checks.append(_check(f"example2.rest_point[{d:g}]", drift <= 1e-9, drift=drift))


def _verify_basin(checks, seed):
    p = builtin("example2")
    lin = linearize(p)
    decay = stability.estimate_decay(lin.M)
    prof = stability.estimate_q(lin, samples=VERIFY_SAMPLES, seed=seed)
    b = stability.basin_radius(decay, prof, lin.norm_A_inv)
    checks.append(_check("example2.basin", b.status == "certified" and b.delta_max > 0,
                         r_star=b.r_star, delta_max=b.delta_max, l=decay.l, C=decay.C))


def _verify_cross(checks, opts):
    p = builtin("example2")
    lin = linearize(p)
    d, T = 0.3, 5.0
    grid = np.linspace(0.0, T, 2048)
    rk = dynamics.integrate_reduced(lin, [d], T, Options(**{**opts.__dict__, "t_eval": tuple(grid)}))
    vp = dynamics.volterra_picard(lin, [d], T, grid=2000, sweeps=30, opts=opts)
    sa = dynamics.successive_approximations(p, [d], 16, T, grid=2048, lin=lin, opts=opts)
    x_sa = sa.iterates[-1].x_values[:, 0]
    exact_rk = float(np.max(np.abs(rk.x_values[:, 0] - _exact2(d, grid))))
    exact_vp = float(np.max(np.abs(vp.x_values[:, 0] - _exact2(d, vp.times))))
    gap_sa = float(np.max(np.abs(x_sa - rk.x_values[:, 0])))
    mono = all(b < a for a, b in zip(sa.gaps, sa.gaps[1:]))
    checks.append(_check("example2.volterra_picard", exact_vp <= 1e-4, sup_error=exact_vp))
    checks.append(_check("example2.rk_vs_exact", exact_rk <= 1e-6, sup_error=exact_rk))
    checks.append(_check("example2.successive_approximations", gap_sa <= 1e-4 and mono,
                         iterations=16, gap_to_rk=gap_sa, gaps=sa.gaps))


def _verify_branches(checks, opts):
    for alpha, expect in ((-1.0, ["stable", "stable"]), (2.0, ["stable", "unstable"])):
        p = builtin("example3", {"alpha": alpha, "beta": 1.0, "a": 3.0, "b": 2.0})
        spec = branching.BranchingSpec.from_problem(p)
        bs = branching.enumerate_branches(spec)
        roots = [b.roots[0] for b in bs.branches]
        verdicts = [b.verdict for b in bs.branches]
        ok = (len(roots) == 2 and abs(roots[0] + 3.0) <= 1e-10 and abs(roots[1] + 1.0) <= 1e-10
              and verdicts == expect)
        checks.append(_check(f"example3.branches[alpha={alpha:g}]", ok, roots=roots,
                             verdicts=verdicts, abscissae=[b.abscissa for b in bs.branches]))
    p = builtin("example3", {"alpha": -1.0, "beta": 1.0, "a": 3.0, "b": 2.0})
    bs = branching.enumerate_branches(branching.BranchingSpec.from_problem(p))
    tr = branching.simulate_branch(p, bs.branches[0], [0.05], 10.0, opts)
    checks.append(_check("example3.stable_branch", tr.stabilized, outcome=tr.outcome.kind,
                         constraint_residual=tr.info["constraint_residual"]))


def verify(seed=0, opts=None):
    """Run the oracle suite; returns ``{"passed": bool, "checks": [...]}``.

    Contents are deterministic for a given seed (no timings).
    """
    opts = opts or Options()
    checks = []
    for part in (lambda: _verify_linear(checks),
                 lambda: _verify_trajectories(checks, opts),
                 lambda: _verify_basin(checks, seed),
                 lambda: _verify_cross(checks, opts),
                 lambda: _verify_branches(checks, opts)):
        try:
            part()
        except DAEError as exc:
            checks.append(_check("error", False, error=exc.to_dict()))
    return {"seed": seed, "passed": all(c["passed"] for c in checks), "checks": checks}
