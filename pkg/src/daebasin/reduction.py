"""Linearization at the rest point and elimination of the algebraic variable.

When ``A4 = dG/du`` is invertible, ``G(x, u) = 0`` is solved for ``u(x)`` by
the chord iteration ``u <- u - A4^{-1} G(x, u)``, which is the contraction
``u = -A4^{-1} A3 (x - x0) - A4^{-1} r(x, u)`` rewritten to need a single
constraint evaluation per step.  The reduced vector field is then
``A^{-1} F(x, u(x)) = M (x - x0) + A^{-1} L(x)``.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConvergenceError, DivergenceError, NumericError,
                     PreconditionError, SingularMatrixError)
from .linalg import LUSolver, operator_norm

__all__ = [
    "LinearizationData",
    "linearize",
    "fd_jacobians",
    "implicit_u",
    "reduced_field",
    "recover_u_first_order",
    "nonlinear_remainder",
    "DEFAULT_TRUST_RADIUS",
]

DEFAULT_TRUST_RADIUS = 1.0
JACOBIAN_MISMATCH_RTOL = 1e-3


@dataclass(eq=False)
class LinearizationData:
    problem: object
    A1: np.ndarray
    A2: np.ndarray
    A3: np.ndarray
    A4: np.ndarray
    a4_invertible: bool
    M: np.ndarray = None
    B: np.ndarray = None      # A1 - A2 A4^{-1} A3, the linear part of F(x, u(x))
    A_solver: LUSolver = None
    A4_solver: LUSolver = None
    norm_A_inv: float = None
    warnings: list = field(default_factory=list)
    trust_radius: float = DEFAULT_TRUST_RADIUS

    @property
    def x0(self):
        return self.problem.x0

    @property
    def u0(self):
        return self.problem.u0

    def R(self, x, u, t=0.0):
        """Remainder of ``F`` beyond its linear part at the rest point."""
        dx, du = np.asarray(x) - self.x0, np.asarray(u) - self.u0
        return self.problem.f(x, u, t) - self.A1 @ dx - self.A2 @ du

    def r(self, x, u, t=0.0):
        """Remainder of ``G`` beyond its linear part at the rest point."""
        dx, du = np.asarray(x) - self.x0, np.asarray(u) - self.u0
        return self.problem.g(x, u, t) - self.A3 @ dx - self.A4 @ du


def fd_jacobians(problem, t=0.0):
    """Central-difference Jacobians of ``F`` and ``G`` at the rest point."""
    x0, u0 = problem.x0, problem.u0
    n, m = problem.n, problem.m
    h = 1e-6 * max(1.0, float(np.linalg.norm(np.concatenate([x0, u0]))))
    F = lambda x, u: problem.F(x, u, t)
    G = lambda x, u: problem.G(x, u, t)
    A1, A2 = np.zeros((n, n)), np.zeros((n, m))
    A3, A4 = np.zeros((m, n)), np.zeros((m, m))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        A1[:, j] = (F(x0 + e, u0) - F(x0 - e, u0)) / (2 * h)
        if m:
            A3[:, j] = (G(x0 + e, u0) - G(x0 - e, u0)) / (2 * h)
    for j in range(m):
        e = np.zeros(m)
        e[j] = h
        A2[:, j] = (F(x0, u0 + e) - F(x0, u0 - e)) / (2 * h)
        A4[:, j] = (G(x0, u0 + e) - G(x0, u0 - e)) / (2 * h)
    return {"A1": A1, "A2": A2, "A3": A3, "A4": A4}


def linearize(problem, trust_radius=DEFAULT_TRUST_RADIUS):
    """Jacobians ``A1..A4`` at the rest point and the reduced operator ``M``.

    Supplied Jacobians take precedence; they are compared against finite
    differences and a mismatch beyond ``1e-3`` (relative) is recorded in
    ``warnings``.
    """
    fd = fd_jacobians(problem)
    jac = {}
    warnings = []
    for key, approx in fd.items():
        given = problem.jacobians.get(key)
        if given is None:
            jac[key] = approx
            continue
        given = np.asarray(given, dtype=float)
        scale = max(1.0, float(np.max(np.abs(given))) if given.size else 0.0)
        err = float(np.max(np.abs(given - approx))) if given.size else 0.0
        if err > JACOBIAN_MISMATCH_RTOL * scale:
            warnings.append(f"supplied {key} differs from finite differences by {err:.3e}")
        jac[key] = given

    A_solver = LUSolver(problem.A)
    norm_A_inv = operator_norm(A_solver.solve(np.eye(problem.n)))
    lin = LinearizationData(problem, jac["A1"], jac["A2"], jac["A3"], jac["A4"],
                            a4_invertible=False, A_solver=A_solver,
                            norm_A_inv=norm_A_inv, warnings=warnings,
                            trust_radius=trust_radius)
    try:
        lin.A4_solver = LUSolver(jac["A4"])
    except SingularMatrixError:
        return lin
    lin.a4_invertible = True
    lin.B = lin.A1 - lin.A2 @ lin.A4_solver.solve(lin.A3)
    lin.M = A_solver.solve(lin.B)
    return lin


def _require_invertible(lin):
    if not lin.a4_invertible:
        raise PreconditionError("A4 is singular at the rest point; use the branching analysis")


def recover_u_first_order(lin, x):
    """``u0 - A4^{-1} A3 (x - x0)``: first-order approximation of ``u(x)`` only."""
    _require_invertible(lin)
    return lin.u0 - lin.A4_solver.solve(lin.A3 @ (np.asarray(x, float) - lin.x0))


def implicit_u(lin, x, tol=1e-12, max_iter=200, t=0.0, trust_radius="default", u_start=None):
    """Solve ``G(x, u) = 0`` for ``u`` near the rest point.

    Parameters
    ----------
    lin : LinearizationData
    x : array_like
        State at which to solve.
    tol : float
        Residual target, ``||G(x, u)|| <= tol * max(1, ||x||, ||u||)``.
    trust_radius : float or None
        Refuse ``x`` with ``||x - x0||`` beyond this radius; ``None`` disables
        the check. ``"default"`` uses ``lin.trust_radius``.
    u_start : array_like, optional
        Starting iterate; defaults to the first-order approximation.

    Raises
    ------
    PreconditionError
        ``A4`` singular or ``x`` outside the trust radius.
    DivergenceError
        Residual grew on three consecutive iterations.
    ConvergenceError
        ``max_iter`` reached.
    """
    _require_invertible(lin)
    x = np.asarray(x, dtype=float)
    if trust_radius == "default":
        trust_radius = lin.trust_radius
    dist = float(np.linalg.norm(x - lin.x0))
    if trust_radius is not None and dist > trust_radius:
        raise PreconditionError(f"||x - x0|| = {dist:.3e} exceeds the trust radius {trust_radius:.3e}")
    if lin.problem.m == 0:
        return np.zeros(0)

    u = recover_u_first_order(lin, x) if u_start is None else np.array(u_start, dtype=float)
    xnorm = float(np.linalg.norm(x))
    g = lin.problem.g(x, u, t)
    res = float(np.linalg.norm(g))
    rising = 0
    for it in range(max_iter + 1):
        if not np.isfinite(res):
            raise DivergenceError("constraint residual became non-finite", it, res)
        if res <= tol * max(1.0, xnorm, float(np.linalg.norm(u))):
            return u
        if it == max_iter:
            break
        u = u - lin.A4_solver.solve(g)
        g = lin.problem.g(x, u, t)
        new = float(np.linalg.norm(g))
        rising = rising + 1 if new > res else 0
        res = new
        if rising >= 3:
            raise DivergenceError(f"chord iteration diverging at ||x - x0|| = {dist:.3e}", it + 1, res)
    raise ConvergenceError(f"no convergence in {max_iter} iterations (residual {res:.3e})", max_iter, res)


def _solve_u(lin, x, t, u_guess, trust_radius):
    try:
        return implicit_u(lin, x, t=t, trust_radius=trust_radius)
    except ConvergenceError:
        if u_guess is None:
            raise
        return implicit_u(lin, x, t=t, trust_radius=trust_radius, u_start=u_guess)


def reduced_field(lin, x, t=0.0, trust_radius="default", u_guess=None, return_u=False):
    """``A^{-1} F(x, u(x), t)`` with ``u(x)`` from :func:`implicit_u`."""
    x = np.asarray(x, dtype=float)
    u = _solve_u(lin, x, t, u_guess, trust_radius)
    v = lin.A_solver.solve(lin.problem.f(x, u, t))
    return (v, u) if return_u else v


def nonlinear_remainder(lin, x, t=0.0, trust_radius="default"):
    """``L(x) = F(x, u(x)) - (A1 - A2 A4^{-1} A3)(x - x0)``."""
    _require_invertible(lin)
    x = np.asarray(x, dtype=float)
    u = implicit_u(lin, x, t=t, trust_radius=trust_radius)
    return lin.problem.f(x, u, t) - lin.B @ (x - lin.x0)


def check_inverse(lin, tol=1e-8):
    """Residual of ``A M - (A1 - A2 A4^{-1} A3)``; raises if above ``tol``."""
    _require_invertible(lin)
    res = float(np.max(np.abs(lin.problem.A @ lin.M - lin.B))) if lin.M.size else 0.0
    if res > tol * max(1.0, float(np.max(np.abs(lin.B))) if lin.B.size else 1.0):
        raise NumericError(f"reduced operator residual {res:.3e}")
    return res
