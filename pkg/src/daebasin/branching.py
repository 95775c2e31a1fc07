"""Small-solution branches of a degenerate constraint (singular ``A4``).

Each constraint ``q_k`` has the leading form
``sum_s m_ks x_k^(N_k - s) u_k^s``.  Looking for ``u_k = x_k w_k`` turns it
into the polynomial ``sum_s m_ks w^s``; every combination of simple real
roots gives a branch whose linearization is the matrix ``c_ik = a_ik +
b_ik w_k`` (``k <= m``), ``c_ik = a_ik`` (``k > m``).
"""
import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Options, Trajectory, finish_run
from .errors import DegenerateConstraintError, NoBranchError, PreconditionError
from .integrate import dopri45
from .linalg import DomainError, LUSolver, polynomial_real_roots
from .reduction import linearize
from .stability import spectral_test

__all__ = [
    "BranchingSpec",
    "Branch",
    "BranchSet",
    "branch_roots",
    "enumerate_branches",
    "simulate_branch",
    "MARGINAL_TOL",
]

MARGINAL_TOL = 1e-9
STABLE, UNSTABLE, MARGINAL = "stable", "unstable", "marginal"


@dataclass(frozen=True)
class BranchingSpec:
    n: int
    m: int
    a: np.ndarray
    b: np.ndarray
    coefficients: tuple     # coefficients[k][s], ascending in s

    def __post_init__(self):
        if self.m > self.n:
            raise PreconditionError("branching needs m <= n")
        if len(self.coefficients) != self.m:
            raise PreconditionError(f"expected {self.m} coefficient lists")
        for k, c in enumerate(self.coefficients):
            if len(c) < 3:
                raise PreconditionError(f"constraint {k + 1}: degree N_k must be at least 2")

    @classmethod
    def from_problem(cls, problem, lin=None):
        """Branching data from a problem's branching block.

        Without explicit ``a``/``b`` the linear part is ``A^{-1} A1`` and
        ``A^{-1} A2`` at the rest point.
        """
        blk = problem.branching
        if blk is None:
            raise PreconditionError("problem has no branching block")
        if blk.a is None or blk.b is None:
            lin = lin or linearize(problem)
            Ainv = LUSolver(problem.A)
        a = blk.a if blk.a is not None else Ainv.solve(lin.A1)
        b = blk.b if blk.b is not None else Ainv.solve(lin.A2)
        return cls(problem.n, problem.m, np.asarray(a, float), np.asarray(b, float),
                   tuple(tuple(c) for c in blk.coefficients))


@dataclass(frozen=True)
class Branch:
    roots: tuple
    simple: tuple
    M: np.ndarray
    abscissa: float
    verdict: str
    admissible: bool = True     # False for the all-zero root combination
    has_zero_root: bool = False

    @property
    def stable(self):
        return self.verdict == STABLE

    def to_dict(self):
        return {
            "roots": list(self.roots),
            "abscissa": self.abscissa,
            "verdict": self.verdict,
            "admissible": self.admissible,
            "has_zero_root": self.has_zero_root,
            "M": self.M.tolist(),
        }


@dataclass
class BranchSet:
    spec: BranchingSpec
    roots: list                  # per constraint: list of (root, simple)
    branches: list
    notes: list = field(default_factory=list)

    @property
    def stable(self):
        return [b for b in self.branches if b.stable and b.admissible]


def branch_roots(spec, k):
    """Real roots ``(w, simple)`` of the ``k``-th (0-based) branch polynomial.

    Non-simple roots are returned flagged; they do not generate branches.
    """
    coeffs = spec.coefficients[k]
    try:
        return polynomial_real_roots(coeffs)
    except DomainError as exc:
        raise DegenerateConstraintError(f"constraint {k + 1}: {exc}") from None


def _verdict(abscissa):
    if abs(abscissa) <= MARGINAL_TOL:
        return MARGINAL
    return STABLE if abscissa < 0 else UNSTABLE


def branch_matrix(spec, w):
    C = spec.a.copy()
    for k in range(spec.m):
        C[:, k] = spec.a[:, k] + spec.b[:, k] * w[k]
    return C


def enumerate_branches(spec):
    """All combinations of simple real roots, in lexicographic root order."""
    per_k = [branch_roots(spec, k) for k in range(spec.m)]
    simple = []
    for k, roots in enumerate(per_k):
        s = [w for w, ok in roots if ok]
        if not s:
            raise NoBranchError(k + 1)
        simple.append(s)

    branches = []
    notes = []
    for combo in itertools.product(*simple):
        C = branch_matrix(spec, combo)
        _, a = spectral_test(C)
        zeros = [w == 0.0 for w in combo]
        b = Branch(tuple(float(w) for w in combo), (True,) * spec.m, C, a, _verdict(a),
                   admissible=not all(zeros), has_zero_root=any(zeros))
        branches.append(b)
        if not b.admissible:
            notes.append(f"roots {b.roots}: all-zero combination excluded")
        elif b.has_zero_root:
            notes.append(f"roots {b.roots}: contains a zero root (admissibility unsettled)")
    return BranchSet(spec, per_k, branches, notes)


def simulate_branch(problem, branch, x_init, T, opts=None, allow_unstable=False, small=0.1):
    """Integrate the state equation on one branch.

    Uses the first-order branch ``u_k = u0_k + w_k (x_k - x0_k)`` substituted
    into the full ``F`` (linear part and remainders alike); the constraint
    residual along the path is reported in ``info['constraint_residual']``.
    """
    opts = opts or Options()
    if branch.verdict != STABLE and not allow_unstable:
        raise PreconditionError(f"branch {branch.roots} is {branch.verdict}; pass allow_unstable=True")
    x0, u0 = problem.x0, problem.u0
    x_init = np.asarray(x_init, dtype=float).ravel()
    if np.linalg.norm(x_init - x0) > small:
        warnings.warn(f"initial offset {np.linalg.norm(x_init - x0):.3g} is not small", RuntimeWarning, stacklevel=2)
    w = np.asarray(branch.roots, dtype=float)
    m = problem.m
    A = LUSolver(problem.A)

    def u_of(x):
        return u0 + w * (x[:m] - x0[:m])

    def fun(t, x):
        return A.solve(problem.f(x, u_of(x), t))

    res = dopri45(fun, 0.0, x_init, float(T), rtol=opts.rtol, atol=opts.atol, ref=x0,
                  t_eval=opts.t_eval, blow_threshold=opts.blow_threshold,
                  escape_norm=opts.escape_norm, collapse_tol=opts.collapse_tol)
    outcome, times, X = finish_run(res, x0, opts)
    U = np.array([u_of(x) for x in X]).reshape(len(times), m)
    resid = max((float(np.linalg.norm(problem.g(x, u, t))) for t, x, u in zip(times, X, U)), default=0.0)
    return Trajectory(times, X, U, outcome, error_estimate=res.error_estimate,
                      info={"branch": list(branch.roots), "constraint_residual": resid,
                            "status": res.status})
