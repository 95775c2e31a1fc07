"""Trajectories of the reduced system, the coupled successive-approximation
scheme, the Volterra-Picard oracle, and outcome classification.
"""
import csv
import io
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import (ConstraintLossError, ConvergenceError, DAEError,
                     DivergenceError, NumericError, PreconditionError,
                     StepSizeError)
from .integrate import dopri45
from .linalg import matrix_exponential
from .reduction import implicit_u, linearize, recover_u_first_order, reduced_field

__all__ = [
    "Outcome",
    "Trajectory",
    "SweepRecord",
    "SweepResult",
    "SuccessiveResult",
    "Options",
    "classify",
    "integrate_reduced",
    "successive_approximations",
    "volterra_picard",
    "delta_sweep",
    "trajectory_csv",
    "sweep_csv",
    "fmt",
]

STABILIZED, BLOWUP, MAXTIME = "Stabilized", "BlowUp", "MaxTimeReached"


@dataclass(frozen=True)
class Options:
    """Integration and classification settings.

    ``settle_tol``/``dwell`` define settling; ``capture_tol``/``min_rate``
    accept a run that ends inside a small ball while still contracting
    exponentially.  ``blow_threshold``, ``collapse_tol`` and ``p_margin``
    drive the blow-up test; ``trust_radius`` is forwarded to the implicit
    constraint solve (``None`` = unbounded, continuity is kept by the solve
    itself).
    """

    rtol: float = 1e-10
    atol: float = 1e-12
    settle_tol: float = 1e-6
    dwell: float = 1.0
    capture_tol: float = 1e-3
    min_rate: float = 0.05
    blow_threshold: float = 1e8
    escape_norm: float = 1e100
    collapse_tol: float = 1e-6
    p_margin: float = 0.1
    bracket_pad: float = 1e-6
    blowup_tol: float = 1e-2
    trust_radius: float = None
    t_eval: tuple = None


@dataclass(frozen=True)
class Outcome:
    kind: str
    t_settle: float = None
    t_star_bracket: tuple = None
    note: str = ""

    def __str__(self):
        if self.kind == STABILIZED:
            return f"{STABILIZED}(t_settle={self.t_settle:.6g})"
        if self.kind == BLOWUP:
            lo, hi = self.t_star_bracket
            return f"{BLOWUP}(t* in [{lo:.10g}, {hi:.10g}])"
        return MAXTIME

    def to_dict(self):
        d = {"kind": self.kind}
        if self.t_settle is not None:
            d["t_settle"] = self.t_settle
        if self.t_star_bracket is not None:
            d["t_star_low"], d["t_star_high"] = self.t_star_bracket
        if self.note:
            d["note"] = self.note
        return d


@dataclass
class Trajectory:
    times: np.ndarray
    x_values: np.ndarray
    u_values: np.ndarray
    outcome: Outcome
    u_fallback: np.ndarray = None     # True where u came from the first-order formula
    error_estimate: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def stabilized(self):
        return self.outcome.kind == STABILIZED


# -- classification ---------------------------------------------------------

def _growth_exponent(norms, rates, window=400, decades=4.0):
    """Slope of log||f|| against log||x|| over the final growth phase."""
    d = np.asarray(norms[-window:], float)
    r = np.asarray(rates[-window:], float)
    keep = (d > 0) & (r > 0) & np.isfinite(d) & np.isfinite(r) & (d >= d[-1] * 10.0 ** -decades)
    d, r = d[keep], r[keep]
    if d.size < 2 or np.log(d[-1] / d[0]) < np.log(2.0):
        return None
    slope, _ = np.polyfit(np.log(d), np.log(r), 1)
    return float(slope)


def classify(times, states, x0, rates=None, opts=None, ended=None):
    """Outcome of a state stream sampled at increasing ``times``.

    Parameters
    ----------
    times, states : array_like
        The stream; ``states`` has one row per time.
    x0 : array_like
        Rest point.
    rates : array_like, optional
        ``||dx/dt||`` at each sample; finite differences of the norm otherwise.
    ended : str, optional
        How the producing integrator stopped (``finished``, ``escaped``,
        ``collapsed``, ``underflow``).

    Returns
    -------
    Outcome
        ``BlowUp`` needs the norm above ``blow_threshold`` (above its square
        root when the step underflowed), a collapsed last step and a growth
        exponent above ``1 + p_margin``.  ``Stabilized``
        needs the distance to stay below ``settle_tol`` for at least
        ``dwell`` until the end of the stream, or to end below
        ``capture_tol`` while contracting at rate ``>= min_rate`` over the
        last ``dwell``.
    """
    opts = opts or Options()
    t = np.asarray(times, dtype=float)
    X = np.asarray(states, dtype=float).reshape(len(t), -1)
    d = np.linalg.norm(X - np.asarray(x0, float), axis=1)
    if len(t) == 0:
        return Outcome(MAXTIME, note="empty stream")

    # an underflowing step stops the run before fast (e.g. cubic) growth can
    # reach blow_threshold in double precision; sqrt(threshold) then suffices
    reached = d[-1] > opts.blow_threshold or (
        ended == "underflow" and d[-1] > np.sqrt(opts.blow_threshold))
    if reached:
        if rates is None:
            rates = np.empty_like(d)
            rates[1:] = np.abs(np.diff(d)) / np.maximum(np.diff(t), 1e-300)
            rates[0] = rates[1] if len(d) > 1 else 0.0
        rates = np.asarray(rates, dtype=float)
        collapsed = ended in ("collapsed", "escaped", "underflow") or (
            len(t) > 1 and t[-1] - t[-2] < opts.collapse_tol * max(1.0, abs(t[-1])))
        p = _growth_exponent(d, rates)
        if collapsed and p is not None and p > 1.0 + opts.p_margin:
            t_low = float(t[-1])
            remaining = d[-1] / ((p - 1.0) * rates[-1])
            t_high = t_low + 2.0 * remaining + opts.bracket_pad * max(1.0, abs(t_low))
            return Outcome(BLOWUP, t_star_bracket=(t_low, float(t_high)),
                           note=f"growth exponent {p:.3f}")
        return Outcome(MAXTIME, note="norm escaped without finite-time singularity"
                       + (f" (growth exponent {p:.3f})" if p is not None else ""))

    outside = np.flatnonzero(d > opts.settle_tol)
    i_settle = 0 if outside.size == 0 else outside[-1] + 1
    if i_settle < len(t) and t[-1] - t[i_settle] >= opts.dwell:
        return Outcome(STABILIZED, t_settle=float(t[i_settle]), note="settled")

    if d[-1] <= opts.capture_tol and t[-1] - t[0] >= opts.dwell:
        win = t >= t[-1] - opts.dwell
        dw, tw = d[win], t[win]
        if dw.size >= 2 and np.all(dw > 0) and np.all(np.diff(dw) <= 1e-12 * dw[:-1]):
            rate = -np.log(dw[-1] / dw[0]) / (tw[-1] - tw[0])
            if rate >= opts.min_rate:
                beyond = np.flatnonzero(d > opts.capture_tol)
                i_cap = 0 if beyond.size == 0 else beyond[-1] + 1
                return Outcome(STABILIZED, t_settle=float(t[i_cap]),
                               note=f"contracting at rate {rate:.3g} inside capture ball")
    return Outcome(MAXTIME, note=f"final distance {d[-1]:.3e}")


# -- reduced-equation trajectories --------------------------------------------

def _recover_u(lin, times, X, trust_radius):
    m = lin.problem.m
    U = np.zeros((len(times), m))
    fallback = np.zeros(len(times), dtype=bool)
    for k, (t, x) in enumerate(zip(times, X)):
        try:
            U[k] = implicit_u(lin, x, t=t, trust_radius=trust_radius)
        except NumericError:
            U[k] = recover_u_first_order(lin, x)
            fallback[k] = True
    return U, fallback


def finish_run(res, x0, opts):
    """Classify an integrator result; raise when the run failed without escaping.

    Returns ``(outcome, times, states)`` on the requested output grid.
    """
    outcome = classify(res.t, res.y, x0, rates=res.rates, opts=opts, ended=res.status)
    failed = res.status in ("collapsed", "underflow") and outcome.kind != BLOWUP
    if failed and res.norms[-1] <= opts.blow_threshold:
        if isinstance(res.last_error, NumericError):
            raise ConstraintLossError(f"constraint solve failed ({res.last_error})", float(res.t[-1]))
        raise StepSizeError(f"step-size underflow at t={res.t[-1]:.17g} without norm growth")
    if res.t_eval is not None:
        return outcome, res.t_eval, res.y_eval
    return outcome, res.t, res.y


def integrate_reduced(lin, x_init, T, opts=None):
    """Integrate ``dx/dt = A^{-1} F(x, u(x), t)`` from the absolute state ``x_init``.

    ``u`` is re-solved at every stage and recovered at the output times with
    the full implicit solve; samples where that fails fall back to the
    first-order formula and are flagged in ``u_fallback``.
    """
    opts = opts or Options()
    if not lin.a4_invertible:
        raise PreconditionError("A4 is singular; integrate a branch instead")
    x_init = np.asarray(x_init, dtype=float).ravel()
    if x_init.shape != (lin.problem.n,) or not np.all(np.isfinite(x_init)):
        raise PreconditionError("initial state must be finite with length n")
    last = {"u": None}

    def fun(t, x):
        v, u = reduced_field(lin, x, t, trust_radius=opts.trust_radius,
                             u_guess=last["u"], return_u=True)
        last["u"] = u
        return v

    res = dopri45(fun, 0.0, x_init, float(T), rtol=opts.rtol, atol=opts.atol, ref=lin.x0,
                  t_eval=opts.t_eval, blow_threshold=opts.blow_threshold,
                  escape_norm=opts.escape_norm, collapse_tol=opts.collapse_tol)
    outcome, times, X = finish_run(res, lin.x0, opts)
    U, fb = _recover_u(lin, times, X, opts.trust_radius)
    return Trajectory(times, X, U, outcome, fb, res.error_estimate,
                      {"steps": res.n_steps, "rejected": res.n_rejected, "status": res.status})


# -- coupled successive approximations ----------------------------------------

@dataclass
class SuccessiveResult:
    iterates: list
    gaps: list            # sup ||x_n - x_{n-1}|| for n >= 2
    residuals: list       # sup ||G(x_n, u_n)|| for n >= 1
    u_gaps: list
    warnings: list = field(default_factory=list)

    @property
    def converged_gap(self):
        return self.gaps[-1] if self.gaps else None


def successive_approximations(problem, x_init, iterations, T, grid=2048, lin=None,
                              delta_max=None, opts=None):
    """Coupled scheme without prior reduction.

    ``A x_n' = F(x_n, u_{n-1})`` with ``x_n(0) = x_init``; then
    ``A4 w_n = -G(x_n, u_{n-1})`` and ``u_n = u_{n-1} + w_n`` pointwise on a
    fixed grid, starting from ``u_0 = u0``.  Between grid points the previous
    ``u`` is a cubic Hermite interpolant.
    """
    opts = opts or Options()
    lin = lin or linearize(problem)
    if not lin.a4_invertible:
        raise PreconditionError("A4 is singular; successive approximations need an invertible A4")
    x_init = np.asarray(x_init, dtype=float).ravel()
    notes = []
    if delta_max is not None and np.linalg.norm(x_init - problem.x0) > delta_max:
        msg = f"||x_init - x0|| exceeds the certified bound {delta_max:.3e}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)

    tg = np.linspace(0.0, float(T), int(grid))
    u_prev = np.tile(problem.u0, (len(tg), 1))
    x_prev = None
    iterates, gaps, residuals, u_gaps = [], [], [], []
    for it in range(1, int(iterations) + 1):
        if it == 1:
            u_of_t = lambda t: problem.u0
        else:
            du = np.gradient(u_prev, tg, axis=0, edge_order=2)
            spline = CubicHermiteSpline(tg, u_prev, du, axis=0)
            u_of_t = lambda t, s=spline: s(min(max(t, 0.0), tg[-1]))

        fun = lambda t, x, uf=u_of_t: lin.A_solver.solve(problem.f(x, uf(t), t))
        res = dopri45(fun, 0.0, x_init, float(T), rtol=opts.rtol, atol=opts.atol, ref=problem.x0,
                      t_eval=tg, blow_threshold=opts.blow_threshold,
                      escape_norm=opts.escape_norm, collapse_tol=opts.collapse_tol)
        if res.status != "finished":
            outcome = classify(res.t, res.y, problem.x0, res.rates, opts, res.status)
            if outcome.kind != BLOWUP and res.norms[-1] <= opts.blow_threshold:
                raise StepSizeError(f"iterate {it}: integration failed at t={res.t[-1]:.17g}")
            k = len(res.t_eval)
            iterates.append(Trajectory(res.t_eval, res.y_eval, u_prev[:k], outcome,
                                       info={"iterate": it}))
            break

        X = res.y_eval
        W = np.array([-lin.A4_solver.solve(problem.g(x, u, t)) for t, x, u in zip(tg, X, u_prev)])
        U = u_prev + W
        residuals.append(float(max(np.linalg.norm(problem.g(x, u, t)) for t, x, u in zip(tg, X, U))))
        if x_prev is not None:
            gaps.append(float(np.max(np.linalg.norm(X - x_prev, axis=1))))
        u_gaps.append(float(np.max(np.linalg.norm(W, axis=1))))
        outcome = classify(res.t, res.y, problem.x0, res.rates, opts, res.status)
        iterates.append(Trajectory(tg, X, U, outcome, error_estimate=res.error_estimate,
                                   info={"iterate": it}))
        x_prev, u_prev = X, U
    return SuccessiveResult(iterates, gaps, residuals, u_gaps, notes)


# -- Volterra-Picard oracle ---------------------------------------------------

def volterra_picard(lin, x_init, T, grid=2000, sweeps=30, opts=None):
    """Picard sweeps on the integral form of the reduced equation.

    ``y(t) = exp(M t) y(0) + int_0^t exp(M (t - s)) g(y(s), s) ds`` with
    ``y = x - x0`` and ``g = A^{-1} L``, on a uniform grid with the
    trapezoid rule.  Independent of the Runge-Kutta path; used as an oracle.
    """
    opts = opts or Options()
    if not lin.a4_invertible:
        raise PreconditionError("A4 is singular")
    M = lin.M
    x0 = lin.x0
    tg = np.linspace(0.0, float(T), int(grid))
    h = tg[1] - tg[0]
    E = matrix_exponential(M, h)
    y0 = np.asarray(x_init, dtype=float).ravel() - x0

    lin_part = np.empty((len(tg), len(y0)))
    lin_part[0] = y0
    for k in range(1, len(tg)):
        lin_part[k] = E @ lin_part[k - 1]

    def g(y, t):
        x = x0 + y
        return reduced_field(lin, x, t, trust_radius=opts.trust_radius) - M @ y

    Y = lin_part.copy()
    scale = max(1.0, float(np.max(np.abs(lin_part))))
    history = []
    rising = 0
    for sweep in range(int(sweeps)):
        Gv = np.array([g(y, t) for y, t in zip(Y, tg)])
        I = np.zeros_like(Y)
        for k in range(1, len(tg)):
            I[k] = E @ I[k - 1] + 0.5 * h * (E @ Gv[k - 1] + Gv[k])
        Y_new = lin_part + I
        if not np.all(np.isfinite(Y_new)) or np.max(np.abs(Y_new)) > 1e8 * scale:
            raise DivergenceError("Picard sweep left every bounded set", sweep + 1)
        gap = float(np.max(np.linalg.norm(Y_new - Y, axis=1)))
        rising = rising + 1 if history and gap > history[-1] else 0
        history.append(gap)
        Y = Y_new
        if rising >= 3:
            raise DivergenceError(f"Picard sweeps diverging (gap {gap:.3e})", sweep + 1, gap)
        if gap <= 1e-15 * scale:
            break
    X = x0 + Y
    U, fb = _recover_u(lin, tg, X, opts.trust_radius)
    outcome = classify(tg, X, x0, opts=opts)
    return Trajectory(tg, X, U, outcome, fb, info={"sweep_gaps": history})


# -- sweeps ----------------------------------------------------------------------

@dataclass
class SweepRecord:
    delta: tuple
    outcome: Outcome = None
    error: dict = None

    @property
    def kind(self):
        return self.outcome.kind if self.outcome is not None else "Error"


@dataclass
class SweepResult:
    records: list
    boundaries: list = field(default_factory=list)

    def kinds(self):
        return [r.kind for r in self.records]


def delta_sweep(problem, x_inits, T, lin=None, branch=None, opts=None, max_workers=1):
    """Classify the trajectory from each initial state in ``x_inits``.

    ``x_inits`` are absolute states; records carry the offset ``x - x0``.

    Problems with singular ``A4`` need a ``branch`` (see
    :func:`daebasin.branching.enumerate_branches`).  Entries are
    independent; ``max_workers > 1`` runs them on a thread pool with results
    kept in input order.
    """
    opts = opts or Options()
    lin = lin or linearize(problem)
    if not lin.a4_invertible and branch is None:
        raise PreconditionError("A4 is singular; pass the branch to sweep")

    def offset(x):
        return tuple(float(v) for v in x - problem.x0)

    def run(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        try:
            if branch is not None:
                from .branching import simulate_branch
                traj = simulate_branch(problem, branch, x, T, opts=opts)
            else:
                traj = integrate_reduced(lin, x, T, opts)
            return SweepRecord(offset(x), traj.outcome)
        except DAEError as exc:
            return SweepRecord(offset(x), None, exc.to_dict())

    x_inits = list(x_inits)
    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            records = list(pool.map(run, x_inits))
    else:
        records = [run(x) for x in x_inits]

    boundaries = []
    if problem.n == 1 and len(records) > 1:
        ordered = sorted(records, key=lambda r: r.delta[0])
        for a, b in zip(ordered, ordered[1:]):
            if a.kind != b.kind:
                boundaries.append({"between": (a.delta[0], b.delta[0]), "kinds": (a.kind, b.kind)})
    return SweepResult(records, boundaries)


# -- CSV output ------------------------------------------------------------------

def fmt(v):
    """Full-precision text for a float (17 significant digits)."""
    return "" if v is None else format(float(v), ".17g")


def trajectory_csv(traj, fh=None):
    """Write ``t, x1..xn, u1..um, outcome``; returns the text when ``fh`` is None."""
    own = fh is None
    fh = io.StringIO() if own else fh
    n = traj.x_values.shape[1]
    m = traj.u_values.shape[1] if traj.u_values is not None and traj.u_values.ndim == 2 else 0
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)] + ["outcome"])
    for k, t in enumerate(traj.times):
        row = [fmt(t)] + [fmt(v) for v in traj.x_values[k]]
        if m:
            row += [fmt(v) for v in traj.u_values[k]]
        w.writerow(row + [traj.outcome.kind])
    return fh.getvalue() if own else None


def sweep_csv(result, fh=None):
    """Write ``delta1..deltan, outcome, t_star_low, t_star_high, t_settle``."""
    own = fh is None
    fh = io.StringIO() if own else fh
    w = csv.writer(fh, lineterminator="\n")
    n = len(result.records[0].delta) if result.records else 1
    w.writerow([f"delta{i + 1}" for i in range(n)] + ["outcome", "t_star_low", "t_star_high", "t_settle"])
    for r in result.records:
        o = r.outcome
        lo, hi = (o.t_star_bracket if o is not None and o.t_star_bracket else (None, None))
        ts = o.t_settle if o is not None else None
        w.writerow([fmt(v) for v in r.delta] + [r.kind, fmt(lo), fmt(hi), fmt(ts)])
    return fh.getvalue() if own else None
