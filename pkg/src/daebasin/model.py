"""Problem definitions for ``A dx/dt = F(x, u, t)``, ``0 = G(x, u, t)``.

Problems come from JSON files (:func:`load_problem`) or from the builtin
catalogue (:func:`builtin`).  The integro-differential builtin is discretized
on a quadrature grid over ``[0, 1]``.
"""
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .errors import DomainError, ProblemError, RestPointError, SingularMatrixError, UsageError
from .exprparse import Expr, parse, to_text
from .linalg import LUSolver, as_matrix

__all__ = [
    "QuadratureScheme",
    "SystemFunction",
    "Perturbations",
    "BranchingBlock",
    "DAEProblem",
    "discretize_integro",
    "load_problem",
    "problem_from_dict",
    "problem_to_dict",
    "builtin",
    "BUILTINS",
    "inverse_rank_one_coefficient",
]

REST_TOL_FILE = 1e-8


@dataclass(frozen=True)
class QuadratureScheme:
    """Nodes and positive weights on ``[0, 1]``."""

    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        if len(self.nodes) != len(self.weights) or len(self.nodes) == 0:
            raise ProblemError("quadrature", "nodes and weights must be non-empty and of equal length")
        if np.any(self.weights <= 0):
            raise ProblemError("quadrature", "weights must be positive")
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-12:
            raise ProblemError("quadrature", "weights must sum to 1 on [0, 1]")

    @property
    def size(self):
        return len(self.nodes)

    @classmethod
    def gauss_legendre(cls, N):
        x, w = np.polynomial.legendre.leggauss(int(N))
        return cls(0.5 * (x + 1.0), 0.5 * w, "gauss-legendre")

    @classmethod
    def trapezoid(cls, N):
        N = int(N)
        if N < 2:
            raise ProblemError("quadrature", "trapezoid rule needs at least 2 nodes")
        w = np.full(N, 1.0 / (N - 1))
        w[0] = w[-1] = 0.5 / (N - 1)
        return cls(np.linspace(0.0, 1.0, N), w, "trapezoid")


def discretize_integro(kernel, scheme):
    """Matrix ``K`` with ``K[i, j] = kernel(z_i, s_j) * w_j``.

    ``kernel`` is an :class:`Expr` over the symbols ``z`` and ``s`` or a plain
    callable ``kernel(z, s)``.  Callers form ``I + K`` themselves.
    """
    if isinstance(kernel, str):
        kernel = parse(kernel, 0, 0, symbols=("z", "s"))
    if isinstance(kernel, Expr):
        f = kernel.compiled
        kfun = lambda z, s: f((), (), 0.0, {"z": z, "s": s})
    else:
        kfun = kernel
    z = scheme.nodes
    K = np.empty((scheme.size, scheme.size))
    for i, zi in enumerate(z):
        for j, sj in enumerate(z):
            K[i, j] = float(kfun(float(zi), float(sj))) * scheme.weights[j]
    if not np.all(np.isfinite(K)):
        raise DomainError("kernel produced non-finite values")
    return K


class SystemFunction:
    """Vector of expressions evaluated together as ``h(x, u, t) -> ndarray``.

    ``fast`` optionally supplies an equivalent numpy implementation; the
    expression list stays the reference definition.
    """

    def __init__(self, exprs, fast=None):
        self.exprs = tuple(exprs)
        self.fast = fast
        self._fns = [e.compiled for e in self.exprs]

    def __len__(self):
        return len(self.exprs)

    def __call__(self, x, u, t=0.0):
        if self.fast is not None:
            return np.asarray(self.fast(np.asarray(x, float), np.asarray(u, float), float(t)), dtype=float)
        return self.reference(x, u, t)

    def reference(self, x, u, t=0.0):
        xs = [float(v) for v in x]
        us = [float(v) for v in u]
        t = float(t)
        return np.array([f(xs, us, t, None) for f in self._fns], dtype=float)

    def texts(self):
        return [to_text(e) for e in self.exprs]


@dataclass(frozen=True)
class Perturbations:
    """Time-dependent corrections ``A1~(t)`` (n x n) and ``A2~(t)`` (n x m).

    Their decay as ``t -> inf`` is asserted by the user, not checked.
    """

    A1_tilde: tuple = None
    A2_tilde: tuple = None
    decay_asserted: bool = True

    @staticmethod
    def _eval(grid, t):
        return np.array([[e.compiled((), (), t, None) for e in row] for row in grid], dtype=float)

    def apply(self, x_shift, u_shift, t):
        out = 0.0
        if self.A1_tilde is not None:
            out = out + self._eval(self.A1_tilde, t) @ x_shift
        if self.A2_tilde is not None and len(u_shift):
            out = out + self._eval(self.A2_tilde, t) @ u_shift
        return out


@dataclass(frozen=True)
class BranchingBlock:
    """Leading-form coefficients of degenerate constraints.

    ``coefficients[k][s]`` multiplies ``x_k^(N_k - s) u_k^s``; ``a`` and ``b``
    override the linear part of the state equation (defaults: the Jacobians
    ``A1`` and ``A2`` at the rest point).
    """

    coefficients: tuple
    a: np.ndarray = None
    b: np.ndarray = None


@dataclass(frozen=True, eq=False)
class DAEProblem:
    name: str
    n: int
    m: int
    A: np.ndarray
    F: SystemFunction
    G: SystemFunction
    x0: np.ndarray
    u0: np.ndarray
    jacobians: dict = field(default_factory=dict)
    perturbations: Perturbations = None
    branching: BranchingBlock = None
    meta: dict = field(default_factory=dict)

    @property
    def is_autonomous(self):
        return self.perturbations is None

    def f(self, x, u, t=0.0):
        """Right-hand side ``F`` including the non-autonomous terms."""
        out = self.F(x, u, t)
        if self.perturbations is not None:
            out = out + self.perturbations.apply(np.asarray(x, float) - self.x0,
                                                 np.asarray(u, float) - self.u0, t)
        return out

    def g(self, x, u, t=0.0):
        return self.G(x, u, t)

    def rest_residual(self, times=(0.0, 1.0, 10.0)):
        """Largest ``||F||``, ``||G||`` at the rest point over sample times."""
        res = 0.0
        for t in times:
            res = max(res, float(np.linalg.norm(self.F(self.x0, self.u0, t))),
                      float(np.linalg.norm(self.G(self.x0, self.u0, t))))
        return res

    def validate(self, rest_tol=REST_TOL_FILE):
        if self.A.shape != (self.n, self.n):
            raise ProblemError("A", f"expected shape ({self.n}, {self.n}), got {self.A.shape}")
        if len(self.F) != self.n:
            raise ProblemError("F", f"expected {self.n} expressions, got {len(self.F)}")
        if len(self.G) != self.m:
            raise ProblemError("G", f"expected {self.m} expressions, got {len(self.G)}")
        if self.x0.shape != (self.n,) or self.u0.shape != (self.m,):
            raise ProblemError("rest_point", "x0/u0 lengths do not match n/m")
        try:
            LUSolver(self.A)
        except SingularMatrixError as exc:
            raise ProblemError("A", f"singular ({exc})") from None
        res = self.rest_residual()
        if not res <= rest_tol:
            raise RestPointError(res)
        if self.perturbations is not None and not self.perturbations.decay_asserted:
            raise ProblemError("perturbations.decay_asserted", "decay of A1_tilde/A2_tilde must be asserted")
        if self.branching is not None:
            _check_branching(self)
        return self


# -- branching cross-check ------------------------------------------------------

def _check_branching(p, tau=1e-4, rtol=1e-2):
    blk = p.branching
    if p.m > p.n:
        raise ProblemError("branching", "requires m <= n")
    if len(blk.coefficients) != p.m:
        raise ProblemError("branching.coefficients", f"expected {p.m} coefficient lists")
    for k, coeffs in enumerate(blk.coefficients):
        N = len(coeffs) - 1
        if N < 2:
            raise ProblemError(f"branching.coefficients[{k}]", "degree N_k must be at least 2")
        if not any(coeffs):
            raise ProblemError(f"branching.coefficients[{k}]", "all coefficients are zero")
        scale = max(abs(c) for c in coeffs)
        for theta in np.linspace(0.1, 2 * np.pi, 7, endpoint=False):
            xi, eta = math.cos(theta), math.sin(theta)
            x = p.x0.copy()
            u = p.u0.copy()
            x[k] += tau * xi
            u[k] += tau * eta
            got = p.G(x, u, 0.0)[k] / tau ** N
            want = sum(c * xi ** (N - s) * eta ** s for s, c in enumerate(coeffs))
            if abs(got - want) > rtol * scale:
                raise ProblemError(f"branching.coefficients[{k}]",
                                   f"leading form disagrees with G (sampled {got:.6g}, expected {want:.6g})")
    for name, arr, shape in (("a", blk.a, (p.n, p.n)), ("b", blk.b, (p.n, p.m))):
        if arr is not None and arr.shape != shape:
            raise ProblemError(f"branching.{name}", f"expected shape {shape}")


# -- JSON problem files -----------------------------------------------------------

_MATRIX = {
    "oneOf": [
        {"type": "array", "items": {"type": "number"}},
        {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
    ]
}
_EXPR_GRID = {"type": "array", "items": {"oneOf": [
    {"type": "string"}, {"type": "array", "items": {"type": "string"}}]}}

PROBLEM_SCHEMA = {
    "type": "object",
    "required": ["n", "m", "A", "F", "G", "rest_point"],
    "properties": {
        "name": {"type": "string"},
        "n": {"type": "integer", "minimum": 1},
        "m": {"type": "integer", "minimum": 0},
        "A": _MATRIX,
        "F": {"type": "array", "items": {"type": "string"}},
        "G": {"type": "array", "items": {"type": "string"}},
        "rest_point": {
            "type": "object",
            "required": ["x0", "u0"],
            "properties": {
                "x0": {"type": "array", "items": {"type": "number"}},
                "u0": {"type": "array", "items": {"type": "number"}},
            },
        },
        "jacobians": {
            "type": "object",
            "properties": {k: _MATRIX for k in ("A1", "A2", "A3", "A4")},
            "additionalProperties": False,
        },
        "perturbations": {
            "type": "object",
            "required": ["decay_asserted"],
            "properties": {
                "A1_tilde": _EXPR_GRID,
                "A2_tilde": _EXPR_GRID,
                "decay_asserted": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "branching": {
            "type": "object",
            "required": ["coefficients"],
            "properties": {
                "coefficients": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                "a": _MATRIX,
                "b": _MATRIX,
            },
            "additionalProperties": False,
        },
    },
}


def _matrix(value, rows, cols, field_name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1:
        if arr.size != rows * cols:
            raise ProblemError(field_name, f"expected {rows * cols} entries, got {arr.size}")
        arr = arr.reshape(rows, cols)
    if arr.shape != (rows, cols):
        raise ProblemError(field_name, f"expected shape ({rows}, {cols}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ProblemError(field_name, "entries must be finite")
    return arr


def _expr_grid(value, rows, cols, field_name):
    flat = []
    for item in value:
        flat.extend(item if isinstance(item, list) else [item])
    if len(flat) != rows * cols:
        raise ProblemError(field_name, f"expected {rows * cols} expressions, got {len(flat)}")
    exprs = [_parse_field(s, 0, 0, f"{field_name}[{i}]") for i, s in enumerate(flat)]
    return tuple(tuple(exprs[r * cols:(r + 1) * cols]) for r in range(rows))


def _parse_field(text, n, m, field_name):
    try:
        return parse(text, n, m)
    except Exception as exc:  # re-labelled with the offending field
        if hasattr(exc, "code") and exc.code in ("syntax", "unknown_identifier"):
            raise ProblemError(field_name, str(exc)) from None
        raise


def problem_from_dict(doc, rest_tol=REST_TOL_FILE):
    try:
        jsonschema.validate(doc, PROBLEM_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ProblemError(where, exc.message) from None

    n, m = doc["n"], doc["m"]
    A = _matrix(doc["A"], n, n, "A")
    F = SystemFunction(_parse_field(s, n, m, f"F[{i}]") for i, s in enumerate(doc["F"]))
    G = SystemFunction(_parse_field(s, n, m, f"G[{i}]") for i, s in enumerate(doc["G"]))
    rp = doc["rest_point"]
    x0 = np.asarray(rp["x0"], dtype=float)
    u0 = np.asarray(rp["u0"], dtype=float)

    shapes = {"A1": (n, n), "A2": (n, m), "A3": (m, n), "A4": (m, m)}
    jac = {k: _matrix(v, *shapes[k], f"jacobians.{k}") for k, v in doc.get("jacobians", {}).items()}

    pert = None
    if "perturbations" in doc:
        pd = doc["perturbations"]
        pert = Perturbations(
            _expr_grid(pd["A1_tilde"], n, n, "perturbations.A1_tilde") if "A1_tilde" in pd else None,
            _expr_grid(pd["A2_tilde"], n, m, "perturbations.A2_tilde") if "A2_tilde" in pd else None,
            pd["decay_asserted"],
        )

    branching = None
    if "branching" in doc:
        bd = doc["branching"]
        branching = BranchingBlock(
            tuple(tuple(float(c) for c in row) for row in bd["coefficients"]),
            _matrix(bd["a"], n, n, "branching.a") if "a" in bd else None,
            _matrix(bd["b"], n, m, "branching.b") if "b" in bd else None,
        )

    p = DAEProblem(doc.get("name", "problem"), n, m, A, F, G, x0, u0, jac, pert, branching)
    return p.validate(rest_tol)


def load_problem(path):
    """Load and validate a JSON problem file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ProblemError("file", f"{path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ProblemError("file", f"invalid JSON: {exc}") from None
    return problem_from_dict(doc)


def problem_to_dict(p):
    """Inverse of :func:`problem_from_dict` (the numpy fast paths are dropped)."""
    doc = {
        "name": p.name,
        "n": p.n,
        "m": p.m,
        "A": p.A.tolist(),
        "F": p.F.texts(),
        "G": p.G.texts(),
        "rest_point": {"x0": p.x0.tolist(), "u0": p.u0.tolist()},
    }
    if p.jacobians:
        doc["jacobians"] = {k: np.asarray(v).tolist() for k, v in p.jacobians.items()}
    if p.perturbations is not None:
        pd = {"decay_asserted": p.perturbations.decay_asserted}
        for key in ("A1_tilde", "A2_tilde"):
            grid = getattr(p.perturbations, key)
            if grid is not None:
                pd[key] = [[to_text(e) for e in row] for row in grid]
        doc["perturbations"] = pd
    if p.branching is not None:
        bd = {"coefficients": [list(c) for c in p.branching.coefficients]}
        if p.branching.a is not None:
            bd["a"] = p.branching.a.tolist()
        if p.branching.b is not None:
            bd["b"] = p.branching.b.tolist()
        doc["branching"] = bd
    return doc


# -- builtin catalogue ----------------------------------------------------------

def _num(v):
    """Literal text for ``v`` usable inside an expression."""
    v = float(v)
    return repr(v) if v >= 0 else f"(-{repr(-v)})"


def _example1(params):
    N = int(params.get("N", 64))
    if N < 1:
        raise UsageError("example1 needs N >= 1")
    scheme = QuadratureScheme.gauss_legendre(N)
    K = discretize_integro(parse("z*s", 0, 0, symbols=("z", "s")), scheme)

    F = [parse(f"-x{i} + x{i}^3 + u{i}^2", N, N) for i in range(1, N + 1)]
    G = []
    for i in range(1, N + 1):
        integral = " + ".join(f"{_num(K[i - 1, j])}*u{j + 1}" for j in range(N))
        G.append(parse(f"u{i} + {integral} + x{i}^2 + u{i}^2", N, N))

    I = np.eye(N)
    jac = {"A1": -I, "A2": np.zeros((N, N)), "A3": np.zeros((N, N)), "A4": I + K}
    return DAEProblem(
        name="example1",
        n=N, m=N, A=np.eye(N),
        F=SystemFunction(F, fast=lambda x, u, t: -x + x ** 3 + u ** 2),
        G=SystemFunction(G, fast=lambda x, u, t: u + K @ u + x ** 2 + u ** 2),
        x0=np.zeros(N), u0=np.zeros(N),
        jacobians=jac,
        meta={"kernel_matrix": K, "quadrature": scheme},
    )


def _example2(params):
    F = [parse("-x1/2 - u1 + x1^2", 1, 1)]
    G = [parse("2*u1 - x1 + 2*u1*sin(u1) - x1*sin(u1)", 1, 1)]
    pert = None
    if params.get("perturbation"):
        # A1~(t) = c * exp(-t)
        c = float(params["perturbation"])
        pert = Perturbations(((parse(f"{_num(c)}*exp(-t)", 0, 0),),), None, True)
    return DAEProblem(
        name="example2", n=1, m=1, A=np.eye(1),
        F=SystemFunction(F), G=SystemFunction(G),
        x0=np.zeros(1), u0=np.zeros(1), perturbations=pert,
    )


def _example3(params):
    missing = [k for k in ("alpha", "beta", "a", "b") if k not in params]
    if missing:
        raise UsageError(f"example3 requires parameters: {', '.join(missing)}")
    al, be, a, b = (float(params[k]) for k in ("alpha", "beta", "a", "b"))
    F = [parse(f"{_num(al)}*x1 + {_num(be)}*u1 + u1^2 + x1^3", 1, 1)]
    G = [parse(f"{_num(a)}*x1^2 + {_num(2 * b)}*x1*u1 + u1^2", 1, 1)]
    return DAEProblem(
        name="example3", n=1, m=1, A=np.eye(1),
        F=SystemFunction(F), G=SystemFunction(G),
        x0=np.zeros(1), u0=np.zeros(1),
        jacobians={"A1": [[al]], "A2": [[be]], "A3": [[0.0]], "A4": [[0.0]]},
        branching=BranchingBlock(((a, 2 * b, 1.0),)),
    )


BUILTINS = {"example1": _example1, "example2": _example2, "example3": _example3}


def builtin(name, params=None):
    """Builtin problem by name.

    ``example1`` takes ``N`` (quadrature nodes, default 64); ``example2``
    optionally ``perturbation`` (amplitude of ``A1~(t) = c e^{-t}``);
    ``example3`` requires ``alpha``, ``beta``, ``a``, ``b``.
    """
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise UsageError(f"unknown builtin {name!r}; choose from {sorted(BUILTINS)}") from None
    return factory(dict(params or {})).validate(rest_tol=1e-12)


def inverse_rank_one_coefficient(K):
    """Least-squares ``c`` in ``(I + K)^{-1} = I - c K``, plus the fit residual.

    The inverse is computed numerically, never assumed.
    """
    K = as_matrix(K, "K", square=True)
    I = np.eye(K.shape[0])
    inv = LUSolver(I + K).solve(I)
    D = I - inv
    c = float(np.sum(D * K) / np.sum(K * K))
    resid = float(np.max(np.abs((I + K) @ (I - c * K) - I)))
    return c, resid
